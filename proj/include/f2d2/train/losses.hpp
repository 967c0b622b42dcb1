#pragma once

// Training objectives. Every loss returns a 1x1 Tensor whose gradient reaches
// the model parameters only through the "online" branch; targets are built
// without recording on the tape.

#include "f2d2/autodiff/derivatives.hpp"
#include "f2d2/data/interpolant.hpp"
#include "f2d2/model/flow_map.hpp"

#include <optional>
#include <string>

namespace f2d2::train {

using ad::Matrix;
using ad::Tensor;
using data::InterpolantBatch;
using model::JointFlowMap;
using model::VelocityField;

struct TraceMode {
  enum class Kind { kExact, kHutchinson };
  Kind kind = Kind::kExact;
  int probes = 1;
  ad::ProbeKind probe = ad::ProbeKind::kRademacher;

  static TraceMode exact() { return {}; }
  static TraceMode hutchinson(int n, ad::ProbeKind p = ad::ProbeKind::kRademacher) {
    return {Kind::kHutchinson, n, p};
  }
};

/// Where divergence targets come from: a velocity field (a frozen teacher or
/// the model's own diagonal) and the trace estimator applied to it. `rng` is
/// required for Hutchinson probes.
struct DivergenceSource {
  const VelocityField* field = nullptr;
  TraceMode mode;
  RngStream* rng = nullptr;
};

/// Per-row div v(x, t) under the source's trace mode, without gradients.
Matrix divergence(const DivergenceSource& src, const Matrix& x, const Matrix& t);

/// mean_i |u(x_t, t, t) - target|^2 with target = v_target, or the teacher's
/// velocity when one is given.
Tensor loss_flow_matching(const JointFlowMap& model, const InterpolantBatch& batch,
                          const VelocityField* teacher = nullptr);

/// mean_i |u(x_t,t,s) - sg(u(x_t,t,r) + u(x_r,r,s)) / 2|^2, r = (t + s) / 2.
Tensor loss_shortcut_consistency(const JointFlowMap& model, const InterpolantBatch& batch);

/// The same self-consistency for the divergence head.
Tensor loss_div_consistency(const JointFlowMap& model, const InterpolantBatch& batch);

/// mean_i (d_head(x_t, t, t) - sg(-div v(x_t, t)) * scale)^2, scale from the model.
Tensor loss_div_match(const JointFlowMap& model, const InterpolantBatch& batch,
                      const DivergenceSource& src);

/// MeanFlow regression: target sg((s - t) du/dt + v_target), where du/dt is the
/// derivative along (v_target, 1) in (x, t) with s held fixed.
Tensor loss_meanflow(const JointFlowMap& model, const InterpolantBatch& batch);

/// MeanFlow target for the divergence head:
/// sg((s - t) dD/dt - div v(x_t, t)) * scale. Without a source the divergence
/// comes from the model's own diagonal under `mode`.
Tensor loss_meanflow_div(const JointFlowMap& model, const InterpolantBatch& batch,
                         const std::optional<DivergenceSource>& src, TraceMode mode = {},
                         RngStream* rng = nullptr);

/// Lagrangian divergence target:
/// sg(-div v(Phi_X(x_t,t,s), s) - (s - t) d_s D(x_t, t, s)) * scale.
/// The s-derivative is taken at the base point x_t, where the identity holds.
Tensor loss_lagrangian_div(const JointFlowMap& model, const InterpolantBatch& batch,
                           const DivergenceSource& src);

/// Fused losses sharing forward passes, as used by the training loop.
struct InstantaneousLosses {
  Tensor vm;
  std::optional<Tensor> div;
};
InstantaneousLosses instantaneous_losses(const JointFlowMap& model, const InterpolantBatch& batch,
                                         const VelocityField* teacher,
                                         const DivergenceSource* div_src);

struct ConsistencyLosses {
  Tensor u_sc;
  std::optional<Tensor> d_sc;
  std::optional<Tensor> lag;
};
/// Semigroup consistency for u, plus either the semigroup (`d_consistency`) or
/// the Lagrangian (`lag_src`) objective for D.
ConsistencyLosses consistency_losses(const JointFlowMap& model, const InterpolantBatch& batch,
                                     bool d_consistency, const DivergenceSource* lag_src);

/// Scalar values of every term, with the weighted total
/// vm + u_sc + mf + lambda_div (div + D_sc + lag + mf_div).
struct LossTerms {
  double vm = 0.0;
  double u_sc = 0.0;
  double div = 0.0;
  double d_sc = 0.0;
  double mf = 0.0;
  double mf_div = 0.0;
  double lag = 0.0;
  double lambda_div = 1.0;

  double total() const { return vm + u_sc + mf + lambda_div * (div + d_sc + lag + mf_div); }
  LossTerms& operator+=(const LossTerms& o);
  LossTerms scaled(double c) const;
};

}  // namespace f2d2::train
