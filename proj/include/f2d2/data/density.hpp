#pragma once

#include "f2d2/rng.hpp"

#include <Eigen/Dense>

#include <limits>
#include <string>
#include <variant>
#include <vector>

namespace f2d2::data {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// 4x4 grid of 2x2 cells tiling [-4, 4]^2. Cell (i, j) holds the points with
/// floor((x + 4) / 2) = i and floor((y + 4) / 2) = j and is occupied iff i + j
/// is even. The density is uniform over the 8 occupied cells (area 32).
struct Checkerboard {};

struct StandardGaussian {
  int dim = 2;
};

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<Vector> stddevs;  // diagonal covariance
};

using DensityParams = std::variant<Checkerboard, StandardGaussian, GaussianMixture>;

class Density {
 public:
  explicit Density(DensityParams params);
  static Density checkerboard() { return Density(Checkerboard{}); }
  static Density standard_gaussian(int dim = 2) { return Density(StandardGaussian{dim}); }

  int dim() const;
  std::string kind() const;
  const DensityParams& params() const { return params_; }

  /// n x dim i.i.d. samples.
  Matrix sample(RngStream& rng, Eigen::Index n) const;
  /// Log-density per row; -inf off support.
  Vector logpdf(const Matrix& points) const;
  double logpdf(const Vector& point) const;

 private:
  DensityParams params_;
};

Matrix checkerboard_sample(RngStream& rng, Eigen::Index n);
double checkerboard_logpdf(double x, double y);

/// Standard normal log-density per row: -(d/2) ln(2 pi) - |p|^2 / 2.
Vector gaussian_logpdf(const Matrix& points);
double gaussian_logpdf(const Vector& point);

}  // namespace f2d2::data
