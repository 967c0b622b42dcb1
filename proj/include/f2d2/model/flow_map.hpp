#pragma once

#include "f2d2/autodiff/tensor.hpp"

#include <cstdint>

namespace f2d2::model {

using ad::Matrix;
using ad::Tensor;

/// Both heads of a joint flow map at (x, t, s).
///   u      : n x d average velocity over [t, s]
///   d_head : n x 1 divergence head in training units (D * div_scale)
///   D      : n x 1 average negative divergence, d_head / div_scale
struct JointOutput {
  Tensor u;
  Tensor d_head;
  Tensor D;
};

/// A joint flow map (x, z) -> (x + (s - t) u, z + (s - t) D) given by its
/// average-velocity and average-divergence fields. Implemented by the trained
/// network and by analytic oracles. Tangents on x, t and s propagate through
/// forward(), so time and space derivatives come from JVPs.
class JointFlowMap {
 public:
  virtual ~JointFlowMap() = default;

  /// x: n x d, t and s: n x 1. Counts one evaluation per call.
  JointOutput forward(const Tensor& x, const Tensor& t, const Tensor& s) const {
    ++evaluations_;
    return do_forward(x, t, s);
  }

  virtual int dim() const = 0;
  /// Targets for the divergence head are multiplied by this factor.
  virtual double div_scale() const { return 1.0; }

  std::uint64_t evaluations() const { return evaluations_; }
  void reset_evaluations() const { evaluations_ = 0; }

 protected:
  virtual JointOutput do_forward(const Tensor& x, const Tensor& t, const Tensor& s) const = 0;

 private:
  mutable std::uint64_t evaluations_ = 0;
};

/// Instantaneous velocity field v(x, t) with differentiable evaluation.
class VelocityField {
 public:
  virtual ~VelocityField() = default;

  Tensor velocity(const Tensor& x, const Tensor& t) const {
    ++evaluations_;
    return do_velocity(x, t);
  }
  virtual int dim() const = 0;

  std::uint64_t evaluations() const { return evaluations_; }
  void reset_evaluations() const { evaluations_ = 0; }

 protected:
  virtual Tensor do_velocity(const Tensor& x, const Tensor& t) const = 0;

 private:
  mutable std::uint64_t evaluations_ = 0;
};

/// The diagonal u(x, t, t) of a flow map, read as an instantaneous velocity.
/// Evaluations are counted on the underlying map.
class DiagonalVelocity final : public VelocityField {
 public:
  explicit DiagonalVelocity(const JointFlowMap& map) : map_(map) {}
  int dim() const override { return map_.dim(); }
  const JointFlowMap& map() const { return map_; }

 protected:
  Tensor do_velocity(const Tensor& x, const Tensor& t) const override {
    return map_.forward(x, t, t).u;
  }

 private:
  const JointFlowMap& map_;
};

/// Column of constant time values, n x 1.
inline Tensor time_column(Eigen::Index n, double value) { return Tensor::constant(value, n, 1); }

/// x + (s - t) u(x, t, s), differentiable.
Tensor flow_map_apply(const JointFlowMap& map, const Tensor& x, const Tensor& t, const Tensor& s);
/// z + (s - t) D(x, t, s), differentiable. D never depends on z.
Tensor logdensity_map_apply(const JointFlowMap& map, const Tensor& x, const Tensor& z,
                            const Tensor& t, const Tensor& s);

}  // namespace f2d2::model
