#pragma once

#include "f2d2/autodiff/optim.hpp"
#include "f2d2/model/joint_model.hpp"
#include "f2d2/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace f2d2::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Raised for unreadable, truncated, corrupt, or version-mismatched files.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedStream {
  std::string name;
  std::uint64_t key = 0;
  std::uint64_t position = 0;
};

/// Everything needed to resume or evaluate a model. The on-disk layout is
/// described in docs/checkpoint_format.md.
struct Checkpoint {
  Architecture architecture;
  std::string stage;
  std::uint64_t step = 0;
  Eigen::VectorXd parameters;
  std::optional<ad::AdamState> optimizer;
  std::vector<NamedStream> streams;
  bool divergence_trained = false;

  static Checkpoint from_model(const JointFlowMapModel& model, std::string stage, std::uint64_t step);
  /// Builds a model with this architecture and parameters.
  JointFlowMapModel to_model() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace f2d2::model
