#pragma once

#include "f2d2/autodiff/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace f2d2::ad {

/// Raised by adam_step when a gradient holds NaN or Inf. Parameters and state
/// are left untouched; the caller decides whether to skip or abort.
class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;

  /// Zero accumulators shaped like `params`.
  static AdamState for_params(const std::vector<Tensor>& params, AdamConfig config = {});
  static AdamState for_shapes(const std::vector<Matrix>& like, AdamConfig config = {});
};

/// One bias-corrected Adam update using state.config.lr.
void adam_step(std::vector<Matrix*> params, const std::vector<Matrix>& grads, AdamState& state);
void adam_step(std::vector<Tensor>& params, const std::vector<Matrix>& grads, AdamState& state);

/// base_lr up to decay_start, then base_lr * sqrt(decay_start / step). A
/// non-positive decay_start keeps the rate constant.
double lr_schedule(std::int64_t step, double base_lr, std::int64_t decay_start);

/// Exponential moving average of parameters.
class Ema {
 public:
  Ema(double rate, const std::vector<Tensor>& params);
  void update(const std::vector<Tensor>& params);
  const std::vector<Matrix>& shadow() const { return shadow_; }
  double rate() const { return rate_; }

 private:
  double rate_;
  std::vector<Matrix> shadow_;
};

}  // namespace f2d2::ad
