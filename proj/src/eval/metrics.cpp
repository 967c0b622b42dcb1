#include "f2d2/eval/metrics.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <iomanip>
#include <stdexcept>

namespace f2d2::eval {

LikelihoodEstimator fewstep_estimator(const model::JointFlowMap& map, int k) {
  return [&map, k](const Matrix& x) {
    const auto r = sampling::likelihood_fewstep(map, x, k);
    return Estimate{r.log_density, r.nfe};
  };
}

LikelihoodEstimator reference_estimator(const model::VelocityField& field, int n_steps, train::TraceMode mode,
                                        sampling::Integrator integrator, RngStream* rng) {
  return [&field, n_steps, mode, integrator, rng](const Matrix& x) {
    const auto r = sampling::likelihood_reference(field, x, n_steps, mode, integrator, rng);
    return Estimate{r.log_density, r.nfe};
  };
}

LikelihoodEstimator analytic_estimator(const data::Density& density) {
  return [density](const Matrix& x) { return Estimate{density.logpdf(x), 0}; };
}

std::string CalibrationSummary::to_json() const {
  nlohmann::json j;
  j["mean_nll"] = mean_nll;
  j["mean_abs_error_vs_analytic"] = mean_abs_error_vs_analytic;
  j["fraction_on_support"] = fraction_on_support;
  j["nfe"] = nfe;
  j["n_samples"] = n_samples;
  return j.dump(2);
}

CalibrationSummary nll_calibration(const LikelihoodEstimator& estimator, const data::Density& density,
                                   const Matrix& points) {
  if (points.rows() == 0) throw std::invalid_argument("nll_calibration: no points");
  const Vector truth = density.logpdf(points);
  const Estimate est = estimator(points);
  CalibrationSummary s;
  s.n_samples = points.rows();
  s.nfe = est.nfe;
  double nll = 0.0;
  double err = 0.0;
  Eigen::Index on = 0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    if (!std::isfinite(truth[i])) continue;
    ++on;
    nll -= est.logp[i];
    err += std::abs(est.logp[i] - truth[i]);
  }
  s.fraction_on_support = static_cast<double>(on) / static_cast<double>(points.rows());
  if (on > 0) {
    s.mean_nll = nll / static_cast<double>(on);
    s.mean_abs_error_vs_analytic = err / static_cast<double>(on);
  }
  return s;
}

CalibrationSummary nll_calibration(const LikelihoodEstimator& estimator, const data::Density& density,
                                   RngStream& rng, Eigen::Index n_samples) {
  return nll_calibration(estimator, density, density.sample(rng, n_samples));
}

double per_sample_nll_error(const LikelihoodEstimator& a, const LikelihoodEstimator& b,
                            const Matrix& samples) {
  if (samples.rows() == 0) throw std::invalid_argument("per_sample_nll_error: no samples");
  return (a(samples).logp - b(samples).logp).cwiseAbs().mean();
}

double per_sample_nll_error(const model::JointFlowMap& map, const model::VelocityField& reference,
                            const Matrix& samples, int k, int ref_steps, train::TraceMode mode) {
  return per_sample_nll_error(fewstep_estimator(map, k), reference_estimator(reference, ref_steps, mode),
                              samples);
}

Matrix density_grid(const LikelihoodEstimator& estimator, const Bounds& bounds, int resolution) {
  if (resolution < 2) throw std::invalid_argument("density_grid: resolution must be at least 2");
  const double dx = (bounds.x_max - bounds.x_min) / resolution;
  const double dy = (bounds.y_max - bounds.y_min) / resolution;
  Matrix pts(static_cast<Eigen::Index>(resolution) * resolution, 2);
  Eigen::Index row = 0;
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j, ++row) {
      pts(row, 0) = bounds.x_min + (i + 0.5) * dx;
      pts(row, 1) = bounds.y_min + (j + 0.5) * dy;
    }
  }
  Matrix grid(pts.rows(), 3);
  grid.leftCols(2) = pts;
  grid.col(2) = estimator(pts).logp;
  return grid;
}

void write_grid_csv(const Matrix& grid, std::ostream& out) {
  out << "x,y,logp\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    out << grid(i, 0) << ',' << grid(i, 1) << ',';
    if (std::isfinite(grid(i, 2))) {
      out << grid(i, 2);
    } else {
      out << (grid(i, 2) < 0 ? "-inf" : "nan");
    }
    out << '\n';
  }
}

namespace {

// Sum over all ordered pairs of Euclidean distances.
double pair_distance_sum(const Matrix& a, const Matrix& b) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    total += (b.rowwise() - a.row(i)).rowwise().norm().sum();
  }
  return total;
}

}  // namespace

double energy_distance(const Matrix& a, const Matrix& b, EnergyEstimator estimator) {
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("energy_distance: empty sample set");
  if (a.cols() != b.cols()) throw std::invalid_argument("energy_distance: dimension mismatch");
  const double na = static_cast<double>(a.rows());
  const double nb = static_cast<double>(b.rows());
  const double cross = pair_distance_sum(a, b) / (na * nb);
  const double saa = pair_distance_sum(a, a);
  const double sbb = pair_distance_sum(b, b);
  if (estimator == EnergyEstimator::kVStatistic) return 2.0 * cross - saa / (na * na) - sbb / (nb * nb);
  const double within_a = a.rows() > 1 ? saa / (na * (na - 1.0)) : 0.0;
  const double within_b = b.rows() > 1 ? sbb / (nb * (nb - 1.0)) : 0.0;
  return 2.0 * cross - within_a - within_b;
}

}  // namespace f2d2::eval
