#include "f2d2/train/losses.hpp"

#include "f2d2/model/residuals.hpp"

#include <stdexcept>

namespace f2d2::train {

namespace {

Tensor mean_squared_norm(const Tensor& diff) {
  return ad::scale(ad::sum(ad::square(diff)), 1.0 / static_cast<double>(diff.rows()));
}

Matrix times_rows(const Matrix& m, const Eigen::ArrayXd& h) { return (m.array().colwise() * h).matrix(); }

Eigen::ArrayXd gaps(const InterpolantBatch& b) { return (b.s - b.t).col(0).array(); }

Matrix velocity_of(const VelocityField& field, const Matrix& x, const Matrix& t) {
  ad::NoGradGuard no_grad;
  return field.velocity(Tensor(x), Tensor(t)).value();
}

}  // namespace

Matrix divergence(const DivergenceSource& src, const Matrix& x, const Matrix& t) {
  if (src.field == nullptr) throw ad::ContractViolation("divergence source has no velocity field");
  const Tensor tt(t);
  const ad::TensorFn fn = [&](const Tensor& xi) { return src.field->velocity(xi, tt); };
  if (src.mode.kind == TraceMode::Kind::kExact) return ad::jacobian_trace_exact(fn, Tensor(x)).trace;
  if (src.rng == nullptr) throw ad::ContractViolation("Hutchinson divergence requires an RNG stream");
  return ad::hutchinson_trace(fn, Tensor(x), src.mode.probes, *src.rng, src.mode.probe).trace;
}

InstantaneousLosses instantaneous_losses(const JointFlowMap& model, const InterpolantBatch& batch,
                                         const VelocityField* teacher,
                                         const DivergenceSource* div_src) {
  const Matrix target = teacher ? velocity_of(*teacher, batch.xt, batch.t) : batch.v_target;
  std::optional<Matrix> div_target;
  if (div_src) div_target = -model.div_scale() * divergence(*div_src, batch.xt, batch.t);

  const Tensor t(batch.t);
  const model::JointOutput out = model.forward(Tensor(batch.xt), t, t);
  InstantaneousLosses losses;
  losses.vm = mean_squared_norm(out.u - Tensor(target));
  if (div_target) losses.div = mean_squared_norm(out.d_head - Tensor(*div_target));
  return losses;
}

Tensor loss_flow_matching(const JointFlowMap& model, const InterpolantBatch& batch,
                          const VelocityField* teacher) {
  return instantaneous_losses(model, batch, teacher, nullptr).vm;
}

Tensor loss_div_match(const JointFlowMap& model, const InterpolantBatch& batch,
                      const DivergenceSource& src) {
  return *instantaneous_losses(model, batch, nullptr, &src).div;
}

ConsistencyLosses consistency_losses(const JointFlowMap& model, const InterpolantBatch& batch,
                                     bool d_consistency, const DivergenceSource* lag_src) {
  const Eigen::ArrayXd h = gaps(batch);
  const Matrix r = 0.5 * (batch.t + batch.s);
  Matrix u_target;
  Matrix d_target;
  {
    ad::NoGradGuard no_grad;
    const model::JointOutput first = model.forward(Tensor(batch.xt), Tensor(batch.t), Tensor(r));
    const Matrix xr = batch.xt + times_rows(first.u.value(), (r - batch.t).col(0).array());
    const model::JointOutput second = model.forward(Tensor(xr), Tensor(r), Tensor(batch.s));
    u_target = 0.5 * (first.u.value() + second.u.value());
    if (d_consistency) d_target = 0.5 * (first.d_head.value() + second.d_head.value());
  }
  Matrix lag_target;
  if (lag_src) {
    const Eigen::Index n = batch.size();
    const model::JointJvp j = model::joint_jvp(model, batch.xt, batch.t, batch.s,
                                               Matrix::Zero(n, batch.dim()), Matrix::Zero(n, 1),
                                               Matrix::Ones(n, 1));
    const Matrix phi = batch.xt + times_rows(j.u, h);
    const Matrix div_end = divergence(*lag_src, phi, batch.s);
    lag_target = model.div_scale() * (-div_end - times_rows(j.dD, h));
  }

  const model::JointOutput online = model.forward(Tensor(batch.xt), Tensor(batch.t), Tensor(batch.s));
  ConsistencyLosses losses;
  losses.u_sc = mean_squared_norm(online.u - Tensor(u_target));
  if (d_consistency) losses.d_sc = mean_squared_norm(online.d_head - Tensor(d_target));
  if (lag_src) losses.lag = mean_squared_norm(online.d_head - Tensor(lag_target));
  return losses;
}

Tensor loss_shortcut_consistency(const JointFlowMap& model, const InterpolantBatch& batch) {
  return consistency_losses(model, batch, false, nullptr).u_sc;
}

Tensor loss_div_consistency(const JointFlowMap& model, const InterpolantBatch& batch) {
  return *consistency_losses(model, batch, true, nullptr).d_sc;
}

Tensor loss_lagrangian_div(const JointFlowMap& model, const InterpolantBatch& batch,
                           const DivergenceSource& src) {
  return *consistency_losses(model, batch, false, &src).lag;
}

Tensor loss_meanflow(const JointFlowMap& model, const InterpolantBatch& batch) {
  const Eigen::Index n = batch.size();
  const model::JointJvp j = model::joint_jvp(model, batch.xt, batch.t, batch.s, batch.v_target,
                                             Matrix::Ones(n, 1), Matrix::Zero(n, 1));
  const Matrix target = times_rows(j.du, gaps(batch)) + batch.v_target;
  const model::JointOutput online = model.forward(Tensor(batch.xt), Tensor(batch.t), Tensor(batch.s));
  return mean_squared_norm(online.u - Tensor(target));
}

Tensor loss_meanflow_div(const JointFlowMap& model, const InterpolantBatch& batch,
                         const std::optional<DivergenceSource>& src, TraceMode mode, RngStream* rng) {
  const Eigen::Index n = batch.size();
  const model::JointJvp j = model::joint_jvp(model, batch.xt, batch.t, batch.s, batch.v_target,
                                             Matrix::Ones(n, 1), Matrix::Zero(n, 1));
  Matrix div;
  if (src) {
    div = divergence(*src, batch.xt, batch.t);
  } else {
    const model::DiagonalVelocity diagonal(model);
    div = divergence(DivergenceSource{&diagonal, mode, rng}, batch.xt, batch.t);
  }
  const Matrix target = model.div_scale() * (times_rows(j.dD, gaps(batch)) - div);
  const model::JointOutput online = model.forward(Tensor(batch.xt), Tensor(batch.t), Tensor(batch.s));
  return mean_squared_norm(online.d_head - Tensor(target));
}

LossTerms& LossTerms::operator+=(const LossTerms& o) {
  vm += o.vm;
  u_sc += o.u_sc;
  div += o.div;
  d_sc += o.d_sc;
  mf += o.mf;
  mf_div += o.mf_div;
  lag += o.lag;
  return *this;
}

LossTerms LossTerms::scaled(double c) const {
  LossTerms out = *this;
  out.vm *= c;
  out.u_sc *= c;
  out.div *= c;
  out.d_sc *= c;
  out.mf *= c;
  out.mf_div *= c;
  out.lag *= c;
  return out;
}

}  // namespace f2d2::train
