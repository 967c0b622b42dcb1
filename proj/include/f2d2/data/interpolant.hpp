#pragma once

#include "f2d2/data/density.hpp"

namespace f2d2::data {

/// How interval endpoints are drawn.
enum class TimeScheme {
  kUniformT,      // t ~ U[0,1], s = t
  kUniformPairs,  // (t, s) ~ U([0,1]^2) sorted so that t <= s
  kDiscreteGrid,  // t on the 1/128 grid, s - t in {1, 1/2, ..., 1/128}
};

inline constexpr int kGridUnits = 128;  // smallest time unit is 1 / kGridUnits
inline constexpr int kShortcutLevels = 8;

/// Training tuples. Rows are samples; x0/x1/xt/v_target are n x d, t/s are n x 1.
/// `t` is the start time and `s` the end time of each interval. With forward
/// schemes t <= s; reversed rows (see reverse_fraction) start at the later time.
struct InterpolantBatch {
  Matrix x0;
  Matrix x1;
  Matrix t;
  Matrix s;
  Matrix xt;
  Matrix v_target;
  bool has_pairs = false;

  Eigen::Index size() const { return x0.rows(); }
  int dim() const { return static_cast<int>(x0.cols()); }
  /// Rows [start, start + count) as a new batch.
  InterpolantBatch slice(Eigen::Index start, Eigen::Index count) const;
};

/// x_t = (1 - t) x0 + t x1 row-wise.
Matrix interpolate(const Matrix& x0, const Matrix& x1, const Matrix& t);

/// x0 ~ N(0, I), x1 ~ density, times per scheme. When reverse_fraction > 0,
/// that fraction of pair rows (in expectation) is flipped to run from the
/// later time back to the earlier one, with x_t taken at the new start time.
InterpolantBatch make_interpolant_batch(RngStream& rng, const Density& density, Eigen::Index n,
                                        TimeScheme scheme, double reverse_fraction = 0.0);

/// Batch built from explicit endpoints and times; used by tests and oracles.
InterpolantBatch make_interpolant_batch(const Matrix& x0, const Matrix& x1, const Matrix& t,
                                        const Matrix& s);

}  // namespace f2d2::data
