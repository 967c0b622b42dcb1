#pragma once

// Closed-form flow maps and velocity fields used as test oracles.

#include "f2d2/model/flow_map.hpp"

#include <Eigen/Dense>

namespace f2d2::oracle {

using model::JointFlowMap;
using model::JointOutput;
using model::Matrix;
using model::Tensor;
using model::VelocityField;

/// v(x, t) = x. Trajectories x e^(s - t), so u = x (e^h - 1) / h with h = s - t,
/// and the divergence is d everywhere, giving D = -d.
class LinearFlowMap final : public JointFlowMap {
 public:
  explicit LinearFlowMap(int dim = 2) : dim_(dim) {}
  int dim() const override { return dim_; }

 protected:
  JointOutput do_forward(const Tensor& x, const Tensor& t, const Tensor& s) const override;

 private:
  int dim_;
};

/// v(x, t) = -x^3 per coordinate. With h = s - t and w = 2 h x^2 the exact map
/// is x / sqrt(1 + w), so u = 2 x^3 M(w) with M(w) = ((1 + w)^(-1/2) - 1) / w,
/// and D = sum_i 3 x_i^2 L(w_i) with L(w) = log1p(w) / w. Valid while 1 + w > 0.
class CubicFlowMap final : public JointFlowMap {
 public:
  explicit CubicFlowMap(int dim = 2) : dim_(dim) {}
  int dim() const override { return dim_; }

  static double m(double w);
  static double dm(double w);
  static double l(double w);
  static double dl(double w);

 protected:
  JointOutput do_forward(const Tensor& x, const Tensor& t, const Tensor& s) const override;

 private:
  int dim_;
};

/// u and D independent of (x, t, s).
class ConstantFlowMap final : public JointFlowMap {
 public:
  ConstantFlowMap(Eigen::RowVectorXd u, double d) : u_(std::move(u)), d_(d) {}
  int dim() const override { return static_cast<int>(u_.size()); }

 protected:
  JointOutput do_forward(const Tensor& x, const Tensor& t, const Tensor& s) const override;

 private:
  Eigen::RowVectorXd u_;
  double d_;
};

class LinearVelocity final : public VelocityField {
 public:
  explicit LinearVelocity(int dim = 2) : dim_(dim) {}
  int dim() const override { return dim_; }

 protected:
  Tensor do_velocity(const Tensor& x, const Tensor& t) const override;

 private:
  int dim_;
};

class CubicVelocity final : public VelocityField {
 public:
  explicit CubicVelocity(int dim = 2) : dim_(dim) {}
  int dim() const override { return dim_; }

 protected:
  Tensor do_velocity(const Tensor& x, const Tensor& t) const override;

 private:
  int dim_;
};

class ZeroVelocity final : public VelocityField {
 public:
  explicit ZeroVelocity(int dim = 2) : dim_(dim) {}
  int dim() const override { return dim_; }

 protected:
  Tensor do_velocity(const Tensor& x, const Tensor& t) const override;

 private:
  int dim_;
};

/// Closed-form log p_1 for the linear flow pushed from N(0, I):
/// gaussian_logpdf(x1 e^-1) - d, per row.
Eigen::VectorXd linear_flow_logp1(const Matrix& x1);

}  // namespace f2d2::oracle
