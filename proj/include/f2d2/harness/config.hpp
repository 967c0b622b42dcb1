#pragma once

#include "f2d2/data/density.hpp"
#include "f2d2/model/joint_model.hpp"
#include "f2d2/train/stage.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace f2d2::harness {

/// Invalid configuration. `line` is 1-based, 0 when no position applies.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& file, int line, const std::string& msg);
  int line() const { return line_; }

 private:
  int line_;
};

struct EvalSpec {
  std::vector<int> ks = {1, 2, 4, 8};
  int n_samples = 10000;
  int grid_resolution = 128;
  int reference_steps = 200;
  train::TraceMode reference_trace = train::TraceMode::exact();
};

struct GuidanceSpec {
  int steps = 1;
  std::optional<double> lr;
  int k_samp = 1;
  int n_samples = 1024;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs/checkerboard";
  data::Density density = data::Density::checkerboard();
  model::Architecture architecture;
  train::StagePlan plan;
  EvalSpec eval;
  GuidanceSpec guidance;
};

/// Parses and validates a YAML run config. Checkpoint paths referenced by
/// warm_start / teacher must exist unless they name an earlier stage.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text, const std::string& source_name = "<string>");

/// The final stage that trains a divergence head, or the last stage.
const train::StageConfig& final_stage(const RunConfig& cfg);
/// The first flow-matching stage (the teacher), if any.
const train::StageConfig* teacher_stage(const RunConfig& cfg);

}  // namespace f2d2::harness
