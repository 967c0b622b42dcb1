#include "f2d2/eval/metrics.hpp"
#include "f2d2/model/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace f2d2;
using model::Matrix;

TEST_CASE("energy distance matches independently computed values") {
  const Matrix a = (Matrix(3, 2) << 0, 0, 1, 0, 0, 2).finished();
  const Matrix b = (Matrix(2, 2) << 1, 1, 3, 0).finished();
  // Values from a separate pairwise-distance implementation.
  CHECK(eval::energy_distance(a, b) == doctest::Approx(1.8630548163202114).epsilon(1e-12));
  CHECK(eval::energy_distance(a, b, eval::EnergyEstimator::kUStatistic) ==
        doctest::Approx(0.16323549673700644).epsilon(1e-12));
  const Matrix c = (Matrix(3, 1) << 0, 1, 3).finished();
  const Matrix d = (Matrix(2, 1) << 2, 5).finished();
  CHECK(eval::energy_distance(c, d) == doctest::Approx(2.1666666666666667).epsilon(1e-12));
}

TEST_CASE("energy distance is symmetric, zero on identical sets and non-negative") {
  RngStream rng(1);
  Matrix a(50, 2), b(40, 2);
  rng.fill_normal(a);
  rng.fill_normal(b);
  CHECK(eval::energy_distance(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(eval::energy_distance(a, b) >= 0.0);
  CHECK(eval::energy_distance(a, b) == doctest::Approx(eval::energy_distance(b, a)));
  CHECK_THROWS(eval::energy_distance(a, Matrix(0, 2)));
  CHECK_THROWS(eval::energy_distance(a, Matrix(3, 3)));
}

TEST_CASE("calibration of the analytic estimator has zero error") {
  RngStream rng(2);
  const auto density = data::Density::checkerboard();
  const auto s = eval::nll_calibration(eval::analytic_estimator(density), density, rng, 500);
  CHECK(s.mean_abs_error_vs_analytic == 0.0);
  CHECK(s.mean_nll == doctest::Approx(std::log(32.0)));
  CHECK(s.fraction_on_support == 1.0);
  CHECK(s.nfe == 0);
  CHECK(s.to_json().find("mean_nll") != std::string::npos);
}

TEST_CASE("calibration excludes off-support points") {
  const auto density = data::Density::checkerboard();
  const Matrix pts = (Matrix(2, 2) << -3.5, -3.5, -1.0, -3.0).finished();
  const auto s = eval::nll_calibration(eval::analytic_estimator(density), density, pts);
  CHECK(s.fraction_on_support == 0.5);
  CHECK(s.mean_nll == doctest::Approx(std::log(32.0)));
}

TEST_CASE("few-step and reference estimators agree on the linear flow") {
  RngStream rng(3);
  Matrix x(100, 2);
  rng.fill_normal(x);
  const oracle::LinearFlowMap map;
  const oracle::LinearVelocity v;
  const double err = eval::per_sample_nll_error(map, v, x, 4, 512);
  CHECK(err < 5e-3);
  CHECK(err > 0.0);
  CHECK(eval::per_sample_nll_error(eval::fewstep_estimator(map, 1), eval::fewstep_estimator(map, 8), x) < 1e-10);
}

TEST_CASE("density grid enumerates cell centres x-major") {
  const auto grid = eval::density_grid(eval::analytic_estimator(data::Density::checkerboard()), {}, 4);
  REQUIRE(grid.rows() == 16);
  CHECK(grid(0, 0) == doctest::Approx(-3.0));
  CHECK(grid(0, 1) == doctest::Approx(-3.0));
  CHECK(grid(1, 0) == doctest::Approx(-3.0));
  CHECK(grid(1, 1) == doctest::Approx(-1.0));
  CHECK(grid(4, 0) == doctest::Approx(-1.0));
  CHECK(grid(0, 2) == doctest::Approx(-std::log(32.0)));
  CHECK(std::isinf(grid(1, 2)));
  std::ostringstream out;
  eval::write_grid_csv(grid, out);
  CHECK(out.str().find("-inf") != std::string::npos);
  CHECK_THROWS(eval::density_grid(eval::analytic_estimator(data::Density::checkerboard()), {}, 1));
}
