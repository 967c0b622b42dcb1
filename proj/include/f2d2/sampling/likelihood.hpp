#pragma once

#include "f2d2/model/flow_map.hpp"
#include "f2d2/train/losses.hpp"

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace f2d2::sampling {

using model::JointFlowMap;
using model::Matrix;
using model::VelocityField;
using train::TraceMode;

/// One backward step from time t to time s (s < t). `increment` holds the
/// per-sample contribution of the step to log p_1, so that
/// log_density = gaussian_logpdf(x0) + sum of increments.
struct StepRecord {
  double t = 0.0;
  double s = 0.0;
  Eigen::VectorXd increment;
};

enum class LikelihoodMode { kFewStepHead, kReferenceIntegration };
std::string to_string(LikelihoodMode m);

/// Batched likelihood result; row i of every per-sample field belongs to input i.
struct LikelihoodReport {
  LikelihoodMode mode = LikelihoodMode::kFewStepHead;
  int dim = 0;
  Matrix x0;                    // terminal noise-space points
  Eigen::VectorXd base_logpdf;  // gaussian_logpdf(x0)
  Eigen::VectorXd log_density;  // nats
  Eigen::VectorXd bpd;
  std::uint64_t nfe = 0;  // per-sample function evaluations (batched calls)
  std::vector<StepRecord> per_step;

  /// One JSON object per sample, newline separated.
  void write_json_lines(std::ostream& out) const;
};

/// Raised when the integrated state stops being finite; carries the steps
/// completed so far.
class NonFiniteState : public std::runtime_error {
 public:
  NonFiniteState(const std::string& what, LikelihoodReport partial, int step)
      : std::runtime_error(what), partial_(std::move(partial)), step_(step) {}
  const LikelihoodReport& partial() const { return partial_; }
  int step() const { return step_; }

 private:
  LikelihoodReport partial_;
  int step_;
};

double nats_to_bpd(double nll_nats, int dim);

/// x_{i+1} = Phi_X(x_i, t_i, t_{i+1}) on linspace(0, 1, K + 1). Returns all K + 1
/// states; the last is the sample.
std::vector<Matrix> euler_sample(const JointFlowMap& map, const Matrix& x0, int k);

/// Backward few-step likelihood on linspace(1, 0, K + 1) with the divergence head.
LikelihoodReport likelihood_fewstep(const JointFlowMap& map, const Matrix& x1, int k);

enum class Integrator { kEuler, kMidpoint };

/// Backward integration of the coupled ODE with a trace estimator for div v.
/// `rng` is needed for Hutchinson traces.
LikelihoodReport likelihood_reference(const VelocityField& field, const Matrix& x1, int n_steps,
                                      TraceMode mode = TraceMode::exact(),
                                      Integrator integrator = Integrator::kEuler,
                                      RngStream* rng = nullptr);

}  // namespace f2d2::sampling
