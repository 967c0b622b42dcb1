#include "f2d2/data/density.hpp"
#include "f2d2/data/interpolant.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace f2d2;
using data::Matrix;

TEST_CASE("checkerboard log-density is -ln 32 on occupied cells and -inf elsewhere") {
  const double on = -std::log(32.0);
  CHECK(data::checkerboard_logpdf(-3.5, -3.5) == doctest::Approx(on));  // cell (0,0)
  CHECK(data::checkerboard_logpdf(-1.0, -3.0) == data::kNegInf);      // cell (1,0)
  CHECK(data::checkerboard_logpdf(1.0, 3.0) == data::kNegInf);        // cell (2,3)
  CHECK(data::checkerboard_logpdf(1.0, 1.0) == doctest::Approx(on));    // cell (2,2)
  CHECK(data::checkerboard_logpdf(4.5, 0.0) == data::kNegInf);        // outside the grid
}

TEST_CASE("checkerboard samples lie on the support and cover all cells evenly") {
  RngStream rng(1);
  const Matrix pts = data::checkerboard_sample(rng, 16000);
  const auto lp = data::Density::checkerboard().logpdf(pts);
  CHECK(lp.array().isFinite().all());
  std::array<int, 16> counts{};
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const int cx = static_cast<int>(std::floor((pts(i, 0) + 4) / 2));
    const int cy = static_cast<int>(std::floor((pts(i, 1) + 4) / 2));
    ++counts[cx * 4 + cy];
  }
  for (int c = 0; c < 16; ++c) {
    if ((c / 4 + c % 4) % 2 == 0) CHECK(counts[c] == doctest::Approx(2000).epsilon(0.1));
    else CHECK(counts[c] == 0);
  }
}

TEST_CASE("standard normal log-density") {
  const Matrix p = (Matrix(2, 2) << 0.0, 0.0, 1.0, 2.0).finished();
  const auto lp = data::gaussian_logpdf(p);
  CHECK(lp[0] == doctest::Approx(-std::log(2 * std::numbers::pi)));
  CHECK(lp[1] == doctest::Approx(-std::log(2 * std::numbers::pi) - 2.5));
}

TEST_CASE("interpolant batches follow the linear path") {
  RngStream rng(2);
  const auto density = data::Density::checkerboard();
  for (auto scheme : {data::TimeScheme::kUniformT, data::TimeScheme::kUniformPairs, data::TimeScheme::kDiscreteGrid}) {
    const auto b = data::make_interpolant_batch(rng, density, 500, scheme);
    CHECK(b.size() == 500);
    const Matrix expect = data::interpolate(b.x0, b.x1, b.t);
    CHECK((b.xt - expect).norm() < 1e-12);
    CHECK((b.v_target - (b.x1 - b.x0)).norm() < 1e-12);
    CHECK((b.s.array() >= b.t.array()).all());
    CHECK((b.t.array() >= 0).all());
    CHECK((b.s.array() <= 1).all());
    if (scheme == data::TimeScheme::kUniformT) CHECK(b.t == b.s);
    if (scheme == data::TimeScheme::kDiscreteGrid) {
      for (Eigen::Index i = 0; i < b.size(); ++i) {
        const double units = (b.s(i, 0) - b.t(i, 0)) * data::kGridUnits;
        const double lg = std::log2(units);
        CHECK(lg == doctest::Approx(std::round(lg)));
        CHECK(b.t(i, 0) * data::kGridUnits == doctest::Approx(std::round(b.t(i, 0) * data::kGridUnits)));
      }
    }
  }
}

TEST_CASE("reversed pairs start at the later time") {
  RngStream rng(3);
  const auto b = data::make_interpolant_batch(rng, data::Density::checkerboard(), 4000,
                                              data::TimeScheme::kUniformPairs, 0.5);
  const auto reversed = (b.s.array() < b.t.array()).count();
  CHECK(reversed == doctest::Approx(2000).epsilon(0.1));
  CHECK((b.xt - data::interpolate(b.x0, b.x1, b.t)).norm() < 1e-12);
}
