#include "f2d2/model/oracles.hpp"

#include "f2d2/data/density.hpp"

#include <cmath>

namespace f2d2::oracle {

namespace {

// (e^h - 1) / h and its derivative, with series near h = 0.
double expm1_ratio(double h) {
  if (std::abs(h) < 1e-4) return 1.0 + h / 2.0 + h * h / 6.0 + h * h * h / 24.0;
  return std::expm1(h) / h;
}

double expm1_ratio_deriv(double h) {
  if (std::abs(h) < 1e-4) return 0.5 + h / 3.0 + h * h / 8.0 + h * h * h / 30.0;
  return (h * std::exp(h) - std::expm1(h)) / (h * h);
}

constexpr double kSeriesCutoff = 1e-3;

}  // namespace

double CubicFlowMap::m(double w) {
  if (std::abs(w) < kSeriesCutoff) {
    return -0.5 + w * (3.0 / 8.0 + w * (-5.0 / 16.0 + w * (35.0 / 128.0 - w * 63.0 / 256.0)));
  }
  return (1.0 / std::sqrt(1.0 + w) - 1.0) / w;
}

double CubicFlowMap::dm(double w) {
  if (std::abs(w) < kSeriesCutoff) {
    return 3.0 / 8.0 + w * (-5.0 / 8.0 + w * (105.0 / 128.0 - w * 63.0 / 64.0));
  }
  const double g = 1.0 / std::sqrt(1.0 + w);
  const double dg = -0.5 * g * g * g;
  return (dg * w - (g - 1.0)) / (w * w);
}

double CubicFlowMap::l(double w) {
  if (std::abs(w) < kSeriesCutoff) return 1.0 + w * (-0.5 + w * (1.0 / 3.0 + w * (-0.25 + w / 5.0)));
  return std::log1p(w) / w;
}

double CubicFlowMap::dl(double w) {
  if (std::abs(w) < kSeriesCutoff) return -0.5 + w * (2.0 / 3.0 + w * (-0.75 + w * 0.8));
  return (w / (1.0 + w) - std::log1p(w)) / (w * w);
}

JointOutput LinearFlowMap::do_forward(const Tensor& x, const Tensor& t, const Tensor& s) const {
  const Tensor ratio = ad::elementwise(s - t, expm1_ratio, expm1_ratio_deriv);
  JointOutput out;
  out.u = x * ratio;
  out.D = Tensor::constant(-static_cast<double>(dim_), x.rows(), 1);
  out.d_head = out.D;
  return out;
}

JointOutput CubicFlowMap::do_forward(const Tensor& x, const Tensor& t, const Tensor& s) const {
  const Tensor x2 = ad::square(x);
  const Tensor w = 2.0 * ((s - t) * x2);
  JointOutput out;
  out.u = 2.0 * (x2 * x * ad::elementwise(w, &CubicFlowMap::m, &CubicFlowMap::dm));
  out.D = ad::sum_cols(3.0 * (x2 * ad::elementwise(w, &CubicFlowMap::l, &CubicFlowMap::dl)));
  out.d_head = out.D;
  return out;
}

JointOutput ConstantFlowMap::do_forward(const Tensor& x, const Tensor& /*t*/, const Tensor& /*s*/) const {
  JointOutput out;
  out.u = Tensor(u_.replicate(x.rows(), 1));
  out.D = Tensor::constant(d_, x.rows(), 1);
  out.d_head = out.D;
  return out;
}

Tensor LinearVelocity::do_velocity(const Tensor& x, const Tensor& /*t*/) const { return x; }

Tensor CubicVelocity::do_velocity(const Tensor& x, const Tensor& /*t*/) const {
  return -(ad::square(x) * x);
}

Tensor ZeroVelocity::do_velocity(const Tensor& x, const Tensor& /*t*/) const {
  return Tensor::zeros(x.rows(), x.cols());
}

Eigen::VectorXd linear_flow_logp1(const Matrix& x1) {
  return data::gaussian_logpdf(Matrix(x1 * std::exp(-1.0))).array() - static_cast<double>(x1.cols());
}

}  // namespace f2d2::oracle
