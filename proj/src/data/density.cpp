#include "f2d2/data/density.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace f2d2::data {

namespace {

constexpr double kLn2Pi = 1.8378770664093453;  // ln(2 pi)

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double log_sum_exp(const std::vector<double>& terms) {
  double mx = kNegInf;
  for (double t : terms) mx = std::max(mx, t);
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

}  // namespace

Matrix checkerboard_sample(RngStream& rng, Eigen::Index n) {
  if (n < 1) throw std::invalid_argument("checkerboard_sample: n must be at least 1");
  Matrix out(n, 2);
  for (Eigen::Index k = 0; k < n; ++k) {
    // Occupied cells enumerated as (i, j) with j = 2 * m + (i % 2), m in {0, 1}.
    const auto cell = static_cast<int>(rng.index(8));
    const int i = cell / 2;
    const int j = 2 * (cell % 2) + (i % 2);
    out(k, 0) = -4.0 + 2.0 * i + 2.0 * rng.uniform();
    out(k, 1) = -4.0 + 2.0 * j + 2.0 * rng.uniform();
  }
  return out;
}

double checkerboard_logpdf(double x, double y) {
  const double fx = std::floor((x + 4.0) / 2.0);
  const double fy = std::floor((y + 4.0) / 2.0);
  if (!(fx >= 0.0 && fx <= 3.0 && fy >= 0.0 && fy <= 3.0)) return kNegInf;
  const auto i = static_cast<int>(fx);
  const auto j = static_cast<int>(fy);
  if ((i + j) % 2 != 0) return kNegInf;
  return -std::log(32.0);
}

Vector gaussian_logpdf(const Matrix& points) {
  const double d = static_cast<double>(points.cols());
  return (-0.5 * d * kLn2Pi - 0.5 * points.rowwise().squaredNorm().array()).matrix();
}

double gaussian_logpdf(const Vector& point) {
  return -0.5 * static_cast<double>(point.size()) * kLn2Pi - 0.5 * point.squaredNorm();
}

Density::Density(DensityParams params) : params_(std::move(params)) {
  if (const auto* gm = std::get_if<GaussianMixture>(&params_)) {
    if (gm->weights.empty() || gm->weights.size() != gm->means.size() ||
        gm->weights.size() != gm->stddevs.size()) {
      throw std::invalid_argument("gaussian mixture: weights, means and stddevs must align");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < gm->weights.size(); ++c) {
      if (gm->weights[c] <= 0.0) throw std::invalid_argument("gaussian mixture: weights must be positive");
      if (gm->means[c].size() != gm->means[0].size() || gm->stddevs[c].size() != gm->means[0].size()) {
        throw std::invalid_argument("gaussian mixture: component dimensions differ");
      }
      if ((gm->stddevs[c].array() <= 0.0).any()) {
        throw std::invalid_argument("gaussian mixture: stddevs must be positive");
      }
      total += gm->weights[c];
    }
    auto& w = std::get<GaussianMixture>(params_).weights;
    for (double& x : w) x /= total;
  }
  if (const auto* sg = std::get_if<StandardGaussian>(&params_)) {
    if (sg->dim < 1) throw std::invalid_argument("standard gaussian: dim must be at least 1");
  }
}

int Density::dim() const {
  return std::visit(Overloaded{[](const Checkerboard&) { return 2; },
                               [](const StandardGaussian& g) { return g.dim; },
                               [](const GaussianMixture& g) { return static_cast<int>(g.means[0].size()); }},
                    params_);
}

std::string Density::kind() const {
  return std::visit(Overloaded{[](const Checkerboard&) { return std::string("checkerboard"); },
                               [](const StandardGaussian&) { return std::string("standard_gaussian"); },
                               [](const GaussianMixture&) { return std::string("gaussian_mixture"); }},
                    params_);
}

Matrix Density::sample(RngStream& rng, Eigen::Index n) const {
  return std::visit(
      Overloaded{[&](const Checkerboard&) { return checkerboard_sample(rng, n); },
                 [&](const StandardGaussian& g) {
                   Matrix out(n, g.dim);
                   rng.fill_normal(out);
                   return out;
                 },
                 [&](const GaussianMixture& g) {
                   const auto d = static_cast<Eigen::Index>(g.means[0].size());
                   Matrix out(n, d);
                   for (Eigen::Index k = 0; k < n; ++k) {
                     double u = rng.uniform();
                     std::size_t c = 0;
                     while (c + 1 < g.weights.size() && u >= g.weights[c]) {
                       u -= g.weights[c];
                       ++c;
                     }
                     for (Eigen::Index j = 0; j < d; ++j) {
                       out(k, j) = g.means[c](j) + g.stddevs[c](j) * rng.normal();
                     }
                   }
                   return out;
                 }},
      params_);
}

double Density::logpdf(const Vector& p) const {
  return std::visit(
      Overloaded{[&](const Checkerboard&) {
                   if (p.size() != 2) throw std::invalid_argument("checkerboard: point must be 2-D");
                   return checkerboard_logpdf(p(0), p(1));
                 },
                 [&](const StandardGaussian&) { return gaussian_logpdf(p); },
                 [&](const GaussianMixture& g) {
                   std::vector<double> terms;
                   for (std::size_t c = 0; c < g.weights.size(); ++c) {
                     const Vector z = (p - g.means[c]).cwiseQuotient(g.stddevs[c]);
                     terms.push_back(std::log(g.weights[c]) + gaussian_logpdf(z) -
                                     g.stddevs[c].array().log().sum());
                   }
                   return log_sum_exp(terms);
                 }},
      params_);
}

Vector Density::logpdf(const Matrix& points) const {
  Vector out(points.rows());
  for (Eigen::Index k = 0; k < points.rows(); ++k) out(k) = logpdf(Vector(points.row(k).transpose()));
  return out;
}

}  // namespace f2d2::data
