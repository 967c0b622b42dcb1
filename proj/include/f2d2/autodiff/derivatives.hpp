#pragma once

#include "f2d2/autodiff/tensor.hpp"
#include "f2d2/rng.hpp"

#include <functional>

namespace f2d2::ad {

using TensorFn = std::function<Tensor(const Tensor&)>;

struct JvpResult {
  Matrix value;
  Matrix derivative;
};

/// (fn(x), J_fn(x) * tangent) from one forward-mode pass.
JvpResult jvp(const TensorFn& fn, const Tensor& x, const Matrix& tangent);

enum class ProbeKind { kRademacher, kGaussian };

/// Per-row traces of a row-wise map R^d -> R^d applied to a batch x (B x d).
/// `value` is fn(x), recovered from the first pass. `evaluations` counts
/// calls to fn.
struct TraceResult {
  Matrix value;
  Matrix trace;  // B x 1
  int evaluations = 0;
};

/// Exact trace via d JVP passes with basis tangents. Rows of x must be
/// independent under fn (true for any batched network).
TraceResult jacobian_trace_exact(const TensorFn& fn, const Tensor& x);

/// Mean over n_probes of eps^T J eps with independent probes per row.
TraceResult hutchinson_trace(const TensorFn& fn, const Tensor& x, int n_probes, RngStream& rng,
                             ProbeKind probe = ProbeKind::kRademacher);

}  // namespace f2d2::ad
