#pragma once

#include "f2d2/harness/config.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace f2d2::harness {

/// Process exit statuses shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitTrainingAbort = 1,
  /// Any other runtime failure (I/O errors, non-finite evaluation state).
  kExitFailure = 1,
  /// Invalid config, missing path, architecture mismatch, corrupt checkpoint,
  /// or a checkpoint without a trained divergence head where one is required.
  kExitUsage = 2,
};

struct CommonOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

struct EvalOptions : CommonOptions {
  std::filesystem::path checkpoint;
  std::vector<int> ks;  // empty means the config's list
};

struct GuideOptions : CommonOptions {
  std::filesystem::path checkpoint;
  std::optional<int> steps;
  std::optional<double> lr;
};

/// Runs the configured stages. Writes <out>/<stage>.ckpt, metrics.csv,
/// validation.csv, timing.csv, per-stage and overall summaries.
int cmd_train(const CommonOptions& opts, std::ostream& log, std::ostream& err);

/// Per K: calibration_K<k>.json, grid_K<k>.csv and likelihood_K<k>.jsonl.
int cmd_eval(const EvalOptions& opts, std::ostream& log, std::ostream& err);

/// Writes unguided.csv, guided.csv and guidance_trace.csv.
int cmd_guide(const GuideOptions& opts, std::ostream& log, std::ostream& err);

/// Config with the command-line overrides applied.
RunConfig resolve_config(const CommonOptions& opts);

// Tunes the C allocator to keep freed blocks instead of unmapping them.
// Idempotent; the command entry points call it themselves.
void retain_freed_memory();

}  // namespace f2d2::harness
