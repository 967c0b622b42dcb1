#include "f2d2/autodiff/optim.hpp"

#include <cmath>

namespace f2d2::ad {

AdamState AdamState::for_params(const std::vector<Tensor>& params, AdamConfig config) {
  std::vector<Matrix> like;
  like.reserve(params.size());
  for (const auto& p : params) like.push_back(p.value());
  return for_shapes(like, config);
}

AdamState AdamState::for_shapes(const std::vector<Matrix>& like, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto& m : like) {
    s.first_moment.push_back(Matrix::Zero(m.rows(), m.cols()));
    s.second_moment.push_back(Matrix::Zero(m.rows(), m.cols()));
  }
  return s;
}

void adam_step(std::vector<Matrix*> params, const std::vector<Matrix>& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ContractViolation("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols() ||
        state.first_moment[i].rows() != grads[i].rows() ||
        state.first_moment[i].cols() != grads[i].cols()) {
      throw ContractViolation("adam_step: shape mismatch");
    }
    if (!grads[i].allFinite()) throw NonFiniteGradient("adam_step: non-finite gradient");
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * grads[i];
    v = c.beta2 * v + (1.0 - c.beta2) * grads[i].cwiseProduct(grads[i]);
    params[i]->array() -=
        c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  }
}

void adam_step(std::vector<Tensor>& params, const std::vector<Matrix>& grads, AdamState& state) {
  std::vector<Matrix*> raw;
  raw.reserve(params.size());
  for (auto& p : params) raw.push_back(&p.mutable_value());
  adam_step(std::move(raw), grads, state);
}

double lr_schedule(std::int64_t step, double base_lr, std::int64_t decay_start) {
  if (decay_start <= 0 || step <= decay_start) return base_lr;
  return base_lr * std::sqrt(static_cast<double>(decay_start) / static_cast<double>(step));
}

Ema::Ema(double rate, const std::vector<Tensor>& params) : rate_(rate) {
  for (const auto& p : params) shadow_.push_back(p.value());
}

void Ema::update(const std::vector<Tensor>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    shadow_[i] = rate_ * shadow_[i] + (1.0 - rate_) * params[i].value();
  }
}

}  // namespace f2d2::ad
