#include "f2d2/model/residuals.hpp"

#include "f2d2/autodiff/derivatives.hpp"

#include <algorithm>

namespace f2d2::model {

JointJvp joint_jvp(const JointFlowMap& map, const Matrix& x, const Matrix& t, const Matrix& s,
                   const Matrix& dx, const Matrix& dt, const Matrix& ds) {
  ad::NoGradGuard no_grad;
  const JointOutput out =
      map.forward(Tensor(x).with_tangent(dx), Tensor(t).with_tangent(dt), Tensor(s).with_tangent(ds));
  return {out.u.value(), out.D.value(), out.u.tangent_or_zero(), out.D.tangent_or_zero()};
}

Eigen::VectorXd velocity_divergence(const VelocityField& field, const Matrix& x, const Matrix& t) {
  const Tensor tt(t);
  const ad::TraceResult tr =
      ad::jacobian_trace_exact([&](const Tensor& xi) { return field.velocity(xi, tt); }, Tensor(x));
  return tr.trace.col(0);
}

namespace {

Matrix velocity_value(const VelocityField& field, const Matrix& x, const Matrix& t) {
  ad::NoGradGuard no_grad;
  return field.velocity(Tensor(x), Tensor(t)).value();
}

Eigen::VectorXd combine(const Matrix& rx, const Eigen::VectorXd& rz) {
  return (rx.rowwise().squaredNorm() + rz.cwiseAbs2()).cwiseSqrt();
}

}  // namespace

FlowMapResiduals flowmap_residuals(const JointFlowMap& map, const Matrix& x, const Matrix& t,
                                   const Matrix& s, const VelocityField& v_ref) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const Matrix zero_x = Matrix::Zero(n, d);
  const Matrix zero_t = Matrix::Zero(n, 1);
  const Matrix ones_t = Matrix::Ones(n, 1);
  const Eigen::ArrayXd h = (s - t).col(0).array();
  FlowMapResiduals res;

  // Lagrangian: derivative in s at the base point, field at the image point.
  {
    const JointJvp j = joint_jvp(map, x, t, s, zero_x, zero_t, ones_t);
    const Matrix phi = x + (j.u.array().colwise() * h).matrix();
    const Matrix dphi = j.u + (j.du.array().colwise() * h).matrix();
    const Eigen::VectorXd dz = j.D.col(0).array() + h * j.dD.col(0).array();
    const Matrix rx = dphi - velocity_value(v_ref, phi, s);
    const Eigen::VectorXd rz = dz + velocity_divergence(v_ref, phi, s);
    res.lagrangian = combine(rx, rz);
  }
  // Eulerian: derivative along (v(x,t), 1, 0), holding s fixed.
  {
    const Matrix v = velocity_value(v_ref, x, t);
    const JointJvp j = joint_jvp(map, x, t, s, v, ones_t, zero_t);
    const Matrix dphi = v - j.u + (j.du.array().colwise() * h).matrix();
    const Eigen::VectorXd dz = -j.D.col(0).array() + h * j.dD.col(0).array();
    res.eulerian = combine(dphi, dz - velocity_divergence(v_ref, x, t));
  }
  // Semigroup through the midpoint.
  {
    ad::NoGradGuard no_grad;
    const Matrix r = 0.5 * (t + s);
    const Eigen::ArrayXd h1 = (r - t).col(0).array();
    const Eigen::ArrayXd h2 = (s - r).col(0).array();
    const JointOutput direct = map.forward(Tensor(x), Tensor(t), Tensor(s));
    const JointOutput first = map.forward(Tensor(x), Tensor(t), Tensor(r));
    const Matrix xr = x + (first.u.value().array().colwise() * h1).matrix();
    const JointOutput second = map.forward(Tensor(xr), Tensor(r), Tensor(s));
    const Matrix x_direct = x + (direct.u.value().array().colwise() * h).matrix();
    const Matrix x_composed = xr + (second.u.value().array().colwise() * h2).matrix();
    const Eigen::VectorXd z_direct = h * direct.D.value().col(0).array();
    const Eigen::VectorXd z_composed =
        h1 * first.D.value().col(0).array() + h2 * second.D.value().col(0).array();
    res.semigroup = combine(x_direct - x_composed, z_direct - z_composed);
  }
  return res;
}

EulerianMeanFlowPair eulerian_meanflow_pair(const JointFlowMap& map, const Matrix& x, const Matrix& t,
                                            const Matrix& s, const VelocityField& v_ref) {
  const Eigen::Index n = x.rows();
  const Matrix v = velocity_value(v_ref, x, t);
  EulerianMeanFlowPair out;
  {
    ad::NoGradGuard no_grad;
    const Tensor xt = Tensor(x).with_tangent(v);
    const Tensor tt = Tensor(t).with_tangent(Matrix::Ones(n, 1));
    const Tensor st = Tensor(s).with_tangent(Matrix::Zero(n, 1));
    const Tensor phi = flow_map_apply(map, xt, tt, st);
    out.eulerian = phi.tangent_or_zero();
  }
  const JointJvp j = joint_jvp(map, x, t, s, v, Matrix::Ones(n, 1), Matrix::Zero(n, 1));
  const Eigen::ArrayXd h = (s - t).col(0).array();
  out.meanflow = j.u - v - (j.du.array().colwise() * h).matrix();
  return out;
}

double median(Eigen::VectorXd values) {
  if (values.size() == 0) return 0.0;
  const auto n = values.size();
  auto* begin = values.data();
  std::nth_element(begin, begin + n / 2, begin + n);
  const double upper = values[n / 2];
  if (n % 2 == 1) return upper;
  std::nth_element(begin, begin + n / 2 - 1, begin + n);
  return 0.5 * (upper + values[n / 2 - 1]);
}

}  // namespace f2d2::model
