#pragma once

#include "f2d2/model/flow_map.hpp"
#include "f2d2/rng.hpp"

#include <optional>

namespace f2d2::sampling {

using model::JointFlowMap;
using model::Matrix;

struct GuidanceConfig {
  int steps = 1;
  /// Adam learning rate on x0. Unset means 1e-3 for one-step sampling and
  /// 5e-3 otherwise.
  std::optional<double> lr;
  int k_samp = 1;

  double effective_lr() const { return lr.value_or(k_samp == 1 ? 1e-3 : 5e-3); }
};

struct GuidedSamples {
  Matrix x0_initial;
  Matrix x0;       // after guidance
  Matrix samples;  // Euler samples from x0
  /// n x (steps + 1): surrogate NLL at the initial x0 and after each update.
  Matrix surrogate_trace;
  std::uint64_t nfe = 0;
};

/// -gaussian_logpdf(x0) - D(x0, 0, 1) per row: the model's one-step NLL of the
/// sample that x0 maps to.
Eigen::VectorXd surrogate_nll(const JointFlowMap& map, const Matrix& x0);

/// Draws n points x0 ~ N(0, I) from `rng`, then Euler-samples them with K steps.
Matrix sample(const JointFlowMap& map, RngStream& rng, Eigen::Index n, int k);

/// Guidance and sampling from given initial points.
GuidedSamples guide_from(const JointFlowMap& map, const Matrix& x0, const GuidanceConfig& cfg);

/// Draws x0 exactly as sample() does, applies cfg.steps Adam updates to x0 on
/// the surrogate NLL, then Euler-samples with cfg.k_samp steps.
GuidedSamples self_guided_sample(const JointFlowMap& map, RngStream& rng, Eigen::Index n,
                                 const GuidanceConfig& cfg);

}  // namespace f2d2::sampling
