#include "f2d2/sampling/guidance.hpp"

#include "f2d2/autodiff/optim.hpp"
#include "f2d2/data/density.hpp"
#include "f2d2/sampling/likelihood.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace f2d2::sampling {

namespace {

Matrix draw_noise(const JointFlowMap& map, RngStream& rng, Eigen::Index n) {
  Matrix x0(n, map.dim());
  rng.fill_normal(x0);
  return x0;
}

// Per-row surrogate as a differentiable column.
model::Tensor surrogate_tensor(const JointFlowMap& map, const model::Tensor& x0) {
  const Eigen::Index n = x0.rows();
  const double log_norm = 0.5 * static_cast<double>(x0.cols()) * std::log(2.0 * std::numbers::pi);
  const model::JointOutput out = map.forward(x0, model::time_column(n, 0.0), model::time_column(n, 1.0));
  return ad::add_scalar(ad::scale(ad::sum_cols(ad::square(x0)), 0.5), log_norm) - out.D;
}

}  // namespace

Eigen::VectorXd surrogate_nll(const JointFlowMap& map, const Matrix& x0) {
  ad::NoGradGuard no_grad;
  return surrogate_tensor(map, model::Tensor(x0)).value().col(0);
}

Matrix sample(const JointFlowMap& map, RngStream& rng, Eigen::Index n, int k) {
  return euler_sample(map, draw_noise(map, rng, n), k).back();
}

GuidedSamples self_guided_sample(const JointFlowMap& map, RngStream& rng, Eigen::Index n,
                                 const GuidanceConfig& cfg) {
  return guide_from(map, draw_noise(map, rng, n), cfg);
}

GuidedSamples guide_from(const JointFlowMap& map, const Matrix& x0, const GuidanceConfig& cfg) {
  if (cfg.steps < 0) throw std::invalid_argument("guidance: steps must be non-negative");
  if (!(cfg.effective_lr() > 0.0)) throw std::invalid_argument("guidance: learning rate must be positive");
  if (cfg.k_samp < 1) throw std::invalid_argument("guidance: K_samp must be at least 1");

  GuidedSamples out;
  out.x0_initial = x0;
  out.surrogate_trace.resize(x0.rows(), cfg.steps + 1);

  std::vector<model::Tensor> x{model::Tensor::parameter(out.x0_initial)};
  ad::AdamState state = ad::AdamState::for_params(x, ad::AdamConfig{.lr = cfg.effective_lr()});
  for (int step = 0; step < cfg.steps; ++step) {
    ad::Tape tape;
    const model::Tensor per_row = surrogate_tensor(map, x[0]);
    ++out.nfe;
    out.surrogate_trace.col(step) = per_row.value().col(0);
    // Rows are independent, so the gradient of the sum is the per-row gradient.
    const std::vector<Matrix> g = ad::grad(ad::sum(per_row), x);
    ad::adam_step(x, g, state);
  }
  out.surrogate_trace.col(cfg.steps) = surrogate_nll(map, x[0].value());
  ++out.nfe;
  out.x0 = x[0].value();
  out.samples = euler_sample(map, out.x0, cfg.k_samp).back();
  out.nfe += static_cast<std::uint64_t>(cfg.k_samp);
  return out;
}

}  // namespace f2d2::sampling
