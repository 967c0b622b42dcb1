#pragma once

#include "f2d2/data/density.hpp"
#include "f2d2/model/flow_map.hpp"
#include "f2d2/sampling/likelihood.hpp"

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>

namespace f2d2::eval {

using model::Matrix;
using Vector = Eigen::VectorXd;

/// Per-row log-density estimates and the per-sample NFE spent on them.
struct Estimate {
  Vector logp;
  std::uint64_t nfe = 0;
};
using LikelihoodEstimator = std::function<Estimate(const Matrix&)>;

LikelihoodEstimator fewstep_estimator(const model::JointFlowMap& map, int k);
LikelihoodEstimator reference_estimator(const model::VelocityField& field, int n_steps,
                                        train::TraceMode mode = train::TraceMode::exact(),
                                        sampling::Integrator integrator = sampling::Integrator::kEuler,
                                        RngStream* rng = nullptr);
/// The density's own logpdf; zero NFE.
LikelihoodEstimator analytic_estimator(const data::Density& density);

struct CalibrationSummary {
  double mean_nll = 0.0;                    // over on-support points
  double mean_abs_error_vs_analytic = 0.0;  // over on-support points
  double fraction_on_support = 0.0;
  std::uint64_t nfe = 0;
  std::int64_t n_samples = 0;

  std::string to_json() const;
};

/// Calibration of an estimator against the analytic density on given points.
/// Points where the analytic log-density is -inf are excluded from the means.
CalibrationSummary nll_calibration(const LikelihoodEstimator& estimator, const data::Density& density,
                                   const Matrix& points);
/// Same on n fresh samples from the density.
CalibrationSummary nll_calibration(const LikelihoodEstimator& estimator, const data::Density& density,
                                   RngStream& rng, Eigen::Index n_samples);

/// mean_i |log p_fewstep(x_i; K) - log p_reference(x_i; ref_steps)|.
double per_sample_nll_error(const model::JointFlowMap& map, const model::VelocityField& reference,
                            const Matrix& samples, int k, int ref_steps,
                            train::TraceMode mode = train::TraceMode::exact());
/// Same between any two estimators.
double per_sample_nll_error(const LikelihoodEstimator& a, const LikelihoodEstimator& b,
                            const Matrix& samples);

struct Bounds {
  double x_min = -4.0, x_max = 4.0;
  double y_min = -4.0, y_max = 4.0;
};

/// resolution^2 rows of (x, y, logp) at cell centres, x-major.
Matrix density_grid(const LikelihoodEstimator& estimator, const Bounds& bounds, int resolution);
void write_grid_csv(const Matrix& grid, std::ostream& out);

enum class EnergyEstimator {
  /// Within-set means include the zero diagonal. Non-negative, exactly zero on
  /// identical sets.
  kVStatistic,
  /// Within-set means exclude the diagonal; unbiased for the population value.
  kUStatistic,
};

/// 2 E|A - B| - E|A - A'| - E|B - B'|.
double energy_distance(const Matrix& a, const Matrix& b,
                       EnergyEstimator estimator = EnergyEstimator::kVStatistic);

}  // namespace f2d2::eval
