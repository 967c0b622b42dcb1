#include "f2d2/data/interpolant.hpp"

#include <cmath>
#include <stdexcept>

namespace f2d2::data {

InterpolantBatch InterpolantBatch::slice(Eigen::Index start, Eigen::Index count) const {
  InterpolantBatch b;
  b.x0 = x0.middleRows(start, count);
  b.x1 = x1.middleRows(start, count);
  b.t = t.middleRows(start, count);
  b.s = s.middleRows(start, count);
  b.xt = xt.middleRows(start, count);
  b.v_target = v_target.middleRows(start, count);
  b.has_pairs = has_pairs;
  return b;
}

Matrix interpolate(const Matrix& x0, const Matrix& x1, const Matrix& t) {
  Matrix out(x0.rows(), x0.cols());
  for (Eigen::Index k = 0; k < x0.rows(); ++k) {
    const double tk = t(k, 0);
    out.row(k) = (1.0 - tk) * x0.row(k) + tk * x1.row(k);
  }
  return out;
}

InterpolantBatch make_interpolant_batch(const Matrix& x0, const Matrix& x1, const Matrix& t,
                                        const Matrix& s) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols() || t.rows() != x0.rows() ||
      s.rows() != x0.rows() || t.cols() != 1 || s.cols() != 1) {
    throw std::invalid_argument("make_interpolant_batch: inconsistent shapes");
  }
  InterpolantBatch b;
  b.x0 = x0;
  b.x1 = x1;
  b.t = t;
  b.s = s;
  b.xt = interpolate(x0, x1, t);
  b.v_target = x1 - x0;
  b.has_pairs = (t.array() != s.array()).any();
  return b;
}

InterpolantBatch make_interpolant_batch(RngStream& rng, const Density& density, Eigen::Index n,
                                        TimeScheme scheme, double reverse_fraction) {
  if (n < 1) throw std::invalid_argument("make_interpolant_batch: n must be at least 1");
  Matrix x1 = density.sample(rng, n);
  Matrix x0(n, density.dim());
  rng.fill_normal(x0);
  Matrix t(n, 1);
  Matrix s(n, 1);
  for (Eigen::Index k = 0; k < n; ++k) {
    switch (scheme) {
      case TimeScheme::kUniformT:
        t(k, 0) = rng.uniform();
        s(k, 0) = t(k, 0);
        break;
      case TimeScheme::kUniformPairs: {
        const double a = rng.uniform();
        const double b = rng.uniform();
        t(k, 0) = std::min(a, b);
        s(k, 0) = std::max(a, b);
        break;
      }
      case TimeScheme::kDiscreteGrid: {
        const auto level = static_cast<int>(rng.index(kShortcutLevels));
        const int span = kGridUnits >> level;  // interval length in grid units
        const auto start = static_cast<int>(rng.index(static_cast<std::uint64_t>(kGridUnits - span + 1)));
        t(k, 0) = static_cast<double>(start) / kGridUnits;
        s(k, 0) = static_cast<double>(start + span) / kGridUnits;
        break;
      }
    }
    if (reverse_fraction > 0.0 && scheme != TimeScheme::kUniformT && rng.uniform() < reverse_fraction) {
      std::swap(t(k, 0), s(k, 0));
    }
  }
  InterpolantBatch b = make_interpolant_batch(x0, x1, t, s);
  b.has_pairs = scheme != TimeScheme::kUniformT;
  return b;
}

}  // namespace f2d2::data
