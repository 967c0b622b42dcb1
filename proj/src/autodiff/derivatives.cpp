#include "f2d2/autodiff/derivatives.hpp"

namespace f2d2::ad {

JvpResult jvp(const TensorFn& fn, const Tensor& x, const Matrix& tangent) {
  if (tangent.rows() != x.rows() || tangent.cols() != x.cols()) {
    throw ContractViolation("jvp: tangent shape differs from input shape");
  }
  NoGradGuard no_grad;
  const Tensor seeded = x.detach().with_tangent(tangent);
  const Tensor out = fn(seeded);
  return {out.value(), out.tangent_or_zero()};
}

TraceResult jacobian_trace_exact(const TensorFn& fn, const Tensor& x) {
  const Index d = x.cols();
  TraceResult result;
  result.trace = Matrix::Zero(x.rows(), 1);
  for (Index i = 0; i < d; ++i) {
    Matrix basis = Matrix::Zero(x.rows(), d);
    basis.col(i).setOnes();
    JvpResult r = jvp(fn, x, basis);
    ++result.evaluations;
    if (r.derivative.cols() != d) {
      throw ContractViolation("jacobian_trace_exact: fn must map dimension d to dimension d");
    }
    result.trace += r.derivative.col(i);
    if (i == 0) result.value = std::move(r.value);
  }
  return result;
}

TraceResult hutchinson_trace(const TensorFn& fn, const Tensor& x, int n_probes, RngStream& rng,
                             ProbeKind probe) {
  if (n_probes < 1) throw ContractViolation("hutchinson_trace: n_probes must be at least 1");
  TraceResult result;
  result.trace = Matrix::Zero(x.rows(), 1);
  Matrix eps(x.rows(), x.cols());
  for (int k = 0; k < n_probes; ++k) {
    if (probe == ProbeKind::kRademacher) {
      rng.fill_rademacher(eps);
    } else {
      rng.fill_normal(eps);
    }
    JvpResult r = jvp(fn, x, eps);
    ++result.evaluations;
    if (r.derivative.cols() != x.cols()) {
      throw ContractViolation("hutchinson_trace: fn must map dimension d to dimension d");
    }
    result.trace += eps.cwiseProduct(r.derivative).rowwise().sum();
    if (k == 0) result.value = std::move(r.value);
  }
  result.trace /= static_cast<double>(n_probes);
  return result;
}

}  // namespace f2d2::ad
