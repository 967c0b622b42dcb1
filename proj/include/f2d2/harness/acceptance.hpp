#pragma once

#include "f2d2/harness/config.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace f2d2::acceptance {

struct Check {
  std::string what;
  double value = 0.0;
  double bound = 0.0;
  bool pass = false;
};

struct CriterionResult {
  int id = 0;
  std::string title;
  std::vector<Check> checks;
  std::string note;
  double seconds = 0.0;

  bool pass() const;
  /// "[PASS] criterion N: title (X s)" followed by one indented line per check.
  void print(std::ostream& out) const;
};

// Tolerances, fixed here so the runner and the tests agree.
inline constexpr double kGradRelTol = 1e-5;
inline constexpr double kJvpRelTol = 1e-6;
inline constexpr double kTraceTol = 1e-6;
inline constexpr double kLinearReferenceTol = 5e-3;
inline constexpr double kLinearExactTol = 1e-10;
inline constexpr double kCorollaryTol = 1e-8;
inline constexpr double kTeacherNllTol = 0.15;
inline constexpr double kFewStepNllTol = 0.30;
inline constexpr double kBaselineMinError = 1.0;
inline constexpr double kImprovementRatio = 5.0;
inline constexpr double kPipelineSeconds = 1800.0;
inline constexpr double kResidualRatio = 0.1;
inline constexpr double kGuidanceFraction = 0.9;
inline constexpr double kEnergySlack = 1.10;

CriterionResult autodiff_correctness(std::uint64_t seed = 1);
CriterionResult trace_estimation(std::uint64_t seed = 2);
CriterionResult linear_flow_oracle(std::uint64_t seed = 3);
CriterionResult meanflow_identity(std::uint64_t seed = 4);

/// Criteria 5 to 7 read the trained run in `run_dir` (produced by `f2d2 train`
/// with `cfg`).
CriterionResult checkerboard_pipeline(const harness::RunConfig& cfg, const std::filesystem::path& run_dir);
CriterionResult flowmap_conditions(const harness::RunConfig& cfg, const std::filesystem::path& run_dir);
CriterionResult self_guidance(const harness::RunConfig& cfg, const std::filesystem::path& run_dir);

/// Trains `cfg` into `rerun_dir` and compares its metrics files with `run_dir`.
CriterionResult determinism(const harness::RunConfig& cfg, const std::filesystem::path& run_dir,
                            const std::filesystem::path& rerun_dir);

/// Runs the listed criteria, printing each result as it completes. Criteria 5
/// to 8 load `config` and read `run_dir`. A criterion that throws is reported
/// as failed. Returns 0 when every criterion passes and 1 otherwise.
int run_criteria(const std::vector<int>& ids, const std::filesystem::path& config,
                 const std::filesystem::path& run_dir, const std::filesystem::path& rerun_dir, std::ostream& out);

}  // namespace f2d2::acceptance
