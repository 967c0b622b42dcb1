#pragma once

#include "f2d2/data/density.hpp"
#include "f2d2/data/interpolant.hpp"
#include "f2d2/model/checkpoint.hpp"
#include "f2d2/model/joint_model.hpp"
#include "f2d2/train/losses.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace f2d2::train {

enum class StageKind {
  kFlowMatching,     // vm only
  kShortcut,         // vm + u_sc
  kShortcutF2D2,     // vm + u_sc + lambda (div + D_sc), or Lagrangian in place of D_sc
  kMeanFlowF2D2,     // mf + lambda mf_div
};
std::string to_string(StageKind k);
StageKind parse_stage_kind(const std::string& s);

/// Target for the instantaneous velocity term and source for divergence targets.
enum class Supervision { kData, kTeacher, kSelf };
std::string to_string(Supervision s);
Supervision parse_supervision(const std::string& s);

struct EarlyStopping {
  bool enabled = false;
  int every = 250;
  std::vector<int> ks = {1, 2, 4, 8};
  int holdout = 2000;
};

struct StageConfig {
  std::string name;
  StageKind kind = StageKind::kFlowMatching;
  std::int64_t steps = 0;
  int batch_size = 512;
  /// Fraction of each batch used by instantaneous terms; the rest feeds the
  /// consistency terms. Ignored when the stage has no consistency term.
  double fm_fraction = 0.75;
  double lr = 1e-3;
  /// Square-root decay starts here; <= 0 keeps the rate constant.
  std::int64_t decay_start = 0;
  double lambda_div = 1.0;
  /// Velocity target for the vm term (data or teacher).
  Supervision velocity_target = Supervision::kData;
  /// Velocity field whose divergence supervises D (teacher or self diagonal).
  Supervision divergence_source = Supervision::kTeacher;
  TraceMode trace = TraceMode::exact();
  /// Use the Lagrangian objective for D instead of its semigroup consistency.
  bool lagrangian = false;
  data::TimeScheme pair_scheme = data::TimeScheme::kDiscreteGrid;
  /// Fraction of consistency pairs that run backward in time (s < t).
  double reverse_fraction = 0.5;
  /// Name of an earlier stage or a checkpoint path; empty starts from a fresh init.
  std::string warm_start;
  /// Name of an earlier stage or a checkpoint path for the frozen teacher.
  std::string teacher;
  EarlyStopping early_stopping;
  double ema_rate = 0.0;  // 0 disables EMA
  int log_every = 100;

  bool has_consistency() const { return kind == StageKind::kShortcut || kind == StageKind::kShortcutF2D2; }
  bool trains_divergence() const {
    return kind == StageKind::kShortcutF2D2 || kind == StageKind::kMeanFlowF2D2;
  }
  bool needs_teacher() const;
};

struct StagePlan {
  std::vector<StageConfig> stages;
  /// Throws std::invalid_argument naming the first offending stage.
  void validate() const;
};

/// Raised when a stage must stop (too many skipped steps, missing warm start).
class TrainingAbort : public std::runtime_error {
 public:
  TrainingAbort(const std::string& stage, std::int64_t step, const std::string& why)
      : std::runtime_error("stage '" + stage + "' step " + std::to_string(step) + ": " + why),
        stage_(stage), step_(step) {}
  const std::string& stage() const { return stage_; }
  std::int64_t step() const { return step_; }

 private:
  std::string stage_;
  std::int64_t step_;
};

/// A warm-start or teacher reference that names neither an earlier stage nor a
/// loadable checkpoint with the run's architecture.
class ReferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StageSummary {
  std::string name;
  std::string kind;
  std::int64_t steps_run = 0;
  std::int64_t skipped = 0;
  LossTerms final_terms;  // mean over the last log interval
  std::optional<double> best_validation;
  std::int64_t best_step = 0;
  std::string checkpoint;

  std::string to_json() const;
};

/// Shared state for running a plan: finished models by stage name, the output
/// directory and the metric sinks.
class TrainingContext {
 public:
  TrainingContext(std::uint64_t seed, data::Density density, model::Architecture arch,
                  std::filesystem::path out_dir);

  std::uint64_t seed() const { return seed_; }
  const data::Density& density() const { return density_; }
  const model::Architecture& architecture() const { return arch_; }
  const std::filesystem::path& out_dir() const { return out_dir_; }

  /// Resolves a stage name or checkpoint path. Throws ReferenceError if neither.
  model::JointFlowMapModel resolve(const std::string& ref, const std::string& stage) const;
  void store(const std::string& stage, model::JointFlowMapModel model);
  bool has(const std::string& stage) const { return models_.count(stage) != 0; }
  const model::JointFlowMapModel& get(const std::string& stage) const;

  std::ostream& metrics();
  std::ostream& validation();
  std::ostream& timing();

 private:
  std::uint64_t seed_;
  data::Density density_;
  model::Architecture arch_;
  std::filesystem::path out_dir_;
  std::map<std::string, std::unique_ptr<model::JointFlowMapModel>> models_;
  std::unique_ptr<std::ostream> metrics_, validation_, timing_;
};

/// Runs stage `index` of `plan`, writes `<out>/<name>.ckpt` and returns its
/// summary. The trained model is stored in the context under the stage name.
StageSummary run_stage(const StagePlan& plan, std::size_t index, TrainingContext& ctx);

/// Runs every stage in order and writes `<out>/summary.json`. Progress lines go
/// to `log` when given.
std::vector<StageSummary> run_plan(const StagePlan& plan, TrainingContext& ctx, std::ostream* log = nullptr);

/// Mean over ks of the mean absolute few-step NLL error against the analytic
/// density on the given (on-support) points.
double fewstep_validation_error(const model::JointFlowMap& map, const data::Density& density,
                                const Matrix& points, const std::vector<int>& ks);

}  // namespace f2d2::train
