#include "f2d2/autodiff/derivatives.hpp"
#include "f2d2/autodiff/optim.hpp"

#include <doctest.h>

#include <cmath>

using namespace f2d2;
using ad::Matrix;
using ad::Tensor;

namespace {

Matrix random_matrix(RngStream& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  rng.fill_normal(m);
  return m;
}

// Central-difference gradient of a scalar function of one matrix.
Matrix numeric_grad(const std::function<double(const Matrix&)>& f, Matrix x) {
  constexpr double h = 1e-6;
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = f(x);
    x.data()[i] = saved - h;
    const double down = f(x);
    x.data()[i] = saved;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

void check_unary(const std::function<Tensor(const Tensor&)>& op, Matrix x) {
  RngStream rng(99);
  const Matrix y = op(Tensor(x)).value();
  const Matrix w = random_matrix(rng, y.rows(), y.cols());
  auto loss = [&](const Tensor& in) { return ad::sum(op(in) * Tensor(w)); };
  std::vector<Tensor> p{Tensor::parameter(x)};
  std::vector<Matrix> g;
  {
    ad::Tape tape;
    g = ad::grad(loss(p[0]), p);
  }
  const Matrix fd = numeric_grad([&](const Matrix& m) { return loss(Tensor(m)).item(); }, x);
  CHECK((g[0] - fd).norm() <= 1e-6 * std::max(1.0, fd.norm()));

  // Forward-mode tangent along a random direction.
  const Matrix v = random_matrix(rng, x.rows(), x.cols());
  const ad::JvpResult j = ad::jvp(op, Tensor(x), v);
  constexpr double h = 1e-6;
  const Matrix fd_dir = (op(Tensor(Matrix(x + h * v))).value() - op(Tensor(Matrix(x - h * v))).value()) / (2 * h);
  CHECK((j.derivative - fd_dir).norm() <= 1e-6 * std::max(1.0, fd_dir.norm()));
}

}  // namespace

TEST_CASE("elementwise ops match finite differences in both modes") {
  RngStream rng(1);
  const Matrix x = random_matrix(rng, 4, 3);
  check_unary([](const Tensor& t) { return ad::gelu(t); }, x);
  check_unary([](const Tensor& t) { return ad::silu(t); }, x);
  check_unary([](const Tensor& t) { return ad::sin(t); }, x);
  check_unary([](const Tensor& t) { return ad::cos(t); }, x);
  check_unary([](const Tensor& t) { return ad::square(t); }, x);
  check_unary([](const Tensor& t) { return ad::exp(t); }, x);
  check_unary([](const Tensor& t) { return ad::sqrt(ad::add_scalar(ad::square(t), 1.0)); }, x);
  check_unary([](const Tensor& t) { return ad::sum_cols(t); }, x);
  check_unary([](const Tensor& t) { return ad::slice_cols(t, 1, 2); }, x);
  check_unary([](const Tensor& t) { return ad::concat_cols({t, ad::scale(t, 2.0)}); }, x);
  check_unary(
      [](const Tensor& t) { return ad::elementwise(t, [](double a) { return a * a * a; }, [](double a) { return 3 * a * a; }); },
      x);
}

TEST_CASE("broadcasting binary ops match finite differences") {
  RngStream rng(2);
  const Matrix row = random_matrix(rng, 1, 3);
  const Matrix col = random_matrix(rng, 4, 1);
  const Matrix scalar = random_matrix(rng, 1, 1);
  const Matrix x = random_matrix(rng, 4, 3);
  check_unary([&](const Tensor& t) { return t * Tensor(row); }, x);
  check_unary([&](const Tensor& t) { return Tensor(col) - t; }, x);
  check_unary([&](const Tensor& t) { return t + Tensor(scalar); }, x);
  // Gradient flowing into the broadcast operand itself.
  check_unary([&](const Tensor& r) { return Tensor(x) * r; }, row);
  check_unary([&](const Tensor& c) { return Tensor(x) * c; }, col);
  check_unary([&](const Tensor& s) { return ad::add(Tensor(x), s); }, scalar);
}

TEST_CASE("matmul and linear gradients for every operand") {
  RngStream rng(3);
  const Matrix x = random_matrix(rng, 5, 3);
  const Matrix w = random_matrix(rng, 3, 2);
  const Matrix b = random_matrix(rng, 1, 2);
  check_unary([&](const Tensor& t) { return ad::linear(t, Tensor(w), Tensor(b)); }, x);
  check_unary([&](const Tensor& t) { return ad::linear(Tensor(x), t, Tensor(b)); }, w);
  check_unary([&](const Tensor& t) { return ad::linear(Tensor(x), Tensor(w), t); }, b);
  check_unary([&](const Tensor& t) { return ad::matmul(t, Tensor(w)); }, x);
}

TEST_CASE("no-grad guard and detach cut the tape") {
  std::vector<Tensor> p{Tensor::parameter(Matrix::Constant(1, 1, 2.0))};
  ad::Tape tape;
  Tensor y;
  {
    ad::NoGradGuard guard;
    y = ad::square(p[0]);
  }
  const Tensor loss = ad::sum(ad::square(p[0]) + y + p[0].detach());
  const auto g = ad::grad(loss, p);
  CHECK(g[0](0, 0) == doctest::Approx(4.0));
}

TEST_CASE("grad returns zero for parameters the loss does not reach") {
  std::vector<Tensor> p{Tensor::parameter(Matrix::Ones(2, 2)), Tensor::parameter(Matrix::Ones(1, 3))};
  ad::Tape tape;
  const auto g = ad::grad(ad::sum(ad::square(p[0])), p);
  CHECK(g[1].isZero());
  CHECK(g[1].cols() == 3);
}

TEST_CASE("exact trace of a linear map equals the matrix trace") {
  const Matrix a = (Matrix(3, 3) << 1, 2, 3, 4, 5, 6, 7, 8, 10).finished();
  const Tensor at(Matrix(a.transpose()));
  RngStream rng(4);
  const Matrix x = random_matrix(rng, 6, 3);
  const auto tr = ad::jacobian_trace_exact([&](const Tensor& in) { return ad::matmul(in, at); }, Tensor(x));
  CHECK(tr.evaluations == 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i) CHECK(tr.trace(i, 0) == doctest::Approx(16.0));
  CHECK((tr.value - x * a.transpose()).norm() < 1e-12);
}

TEST_CASE("Hutchinson with Rademacher probes is exact for diagonal Jacobians") {
  RngStream rng(5);
  const Matrix x = random_matrix(rng, 8, 4);
  const ad::TensorFn fn = [](const Tensor& in) { return ad::sin(in); };
  const auto exact = ad::jacobian_trace_exact(fn, Tensor(x));
  const auto est = ad::hutchinson_trace(fn, Tensor(x), 3, rng);
  CHECK(est.evaluations == 3);
  CHECK((exact.trace - est.trace).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("Gaussian-probe Hutchinson is unbiased on a fixed linear map") {
  const Matrix a = (Matrix(2, 2) << 2.0, 1.0, -3.0, 0.5).finished();
  const Tensor at(Matrix(a.transpose()));
  RngStream rng(6);
  const auto est = ad::hutchinson_trace([&](const Tensor& in) { return ad::matmul(in, at); },
                                        Tensor(Matrix::Zero(20000, 2)), 1, rng, ad::ProbeKind::kGaussian);
  CHECK(est.trace.mean() == doctest::Approx(2.5).epsilon(0.05));
}

TEST_CASE("Adam first step moves each coordinate by lr against the gradient sign") {
  std::vector<Tensor> p{Tensor::parameter((Matrix(1, 3) << 1.0, -2.0, 0.5).finished())};
  ad::AdamState state = ad::AdamState::for_params(p, ad::AdamConfig{.lr = 0.1});
  const std::vector<Matrix> g{(Matrix(1, 3) << 3.0, -0.01, 0.0).finished()};
  ad::adam_step(p, g, state);
  CHECK(p[0].value()(0, 0) == doctest::Approx(0.9));
  CHECK(p[0].value()(0, 1) == doctest::Approx(-1.9));
  CHECK(p[0].value()(0, 2) == doctest::Approx(0.5));
  CHECK(state.step == 1);
}

TEST_CASE("Adam rejects non-finite gradients without touching state") {
  std::vector<Tensor> p{Tensor::parameter(Matrix::Ones(1, 2))};
  ad::AdamState state = ad::AdamState::for_params(p);
  const std::vector<Matrix> g{(Matrix(1, 2) << 1.0, std::nan("")).finished()};
  CHECK_THROWS_AS(ad::adam_step(p, g, state), ad::NonFiniteGradient);
  CHECK(state.step == 0);
  CHECK(p[0].value().isOnes());
}

TEST_CASE("learning-rate schedule is constant then inverse square root") {
  CHECK(ad::lr_schedule(10, 1e-3, 100) == 1e-3);
  CHECK(ad::lr_schedule(100, 1e-3, 100) == 1e-3);
  CHECK(ad::lr_schedule(400, 1e-3, 100) == doctest::Approx(5e-4));
  CHECK(ad::lr_schedule(400, 1e-3, 0) == 1e-3);  // decay disabled
}

TEST_CASE("EMA follows the exponential moving average") {
  std::vector<Tensor> p{Tensor::parameter(Matrix::Zero(1, 1))};
  ad::Ema ema(0.9, p);
  p[0].mutable_value()(0, 0) = 1.0;
  ema.update(p);
  ema.update(p);
  CHECK(ema.shadow()[0](0, 0) == doctest::Approx(1.0 - 0.81));
}
