#include "f2d2/model/checkpoint.hpp"
#include "f2d2/model/joint_model.hpp"
#include "f2d2/model/oracles.hpp"
#include "f2d2/model/residuals.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace f2d2;
using model::Matrix;

namespace {

model::Architecture small_arch(bool zero_heads = true) {
  model::Architecture a;
  a.hidden_width = 16;
  a.hidden_layers = 2;
  a.div_head_hidden = {8};
  a.zero_init_heads = zero_heads;
  return a;
}

Matrix col(Eigen::Index n, double v) { return Matrix::Constant(n, 1, v); }

Matrix rand_matrix(RngStream& rng, Eigen::Index r, Eigen::Index c, double lo = -1, double hi = 1) {
  Matrix m(r, c);
  rng.fill_uniform(m, lo, hi);
  return m;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("f2d2_test_" + name);
}

}  // namespace

TEST_CASE("parameter count and names follow the layer layout") {
  RngStream rng(1);
  const model::JointFlowMapModel net(small_arch(), rng);
  // trunk 4->16, 16->16; velocity 16->2; div head 16->8, 8->1
  CHECK(net.parameter_count() == (4 * 16 + 16) + (16 * 16 + 16) + (16 * 2 + 2) + (16 * 8 + 8) + (8 + 1));
  const auto names = net.parameter_names();
  CHECK(names.front() == "trunk.0.weight");
  CHECK(names.size() == net.parameters().size());
}

TEST_CASE("zero-initialised heads give the identity map with zero log-density change") {
  RngStream rng(2);
  const model::JointFlowMapModel net(small_arch(), rng);
  const Matrix x = rand_matrix(rng, 10, 2);
  ad::NoGradGuard g;
  const Matrix phi = model::flow_map_apply(net, ad::Tensor(x), model::time_column(10, 0.1), model::time_column(10, 0.9)).value();
  CHECK(phi == x);
  const auto out = net.forward(ad::Tensor(x), model::time_column(10, 0.1), model::time_column(10, 0.9));
  CHECK(out.D.value().isZero());
}

TEST_CASE("flow map is the identity at s = t bit for bit") {
  RngStream rng(3);
  const model::JointFlowMapModel net(small_arch(false), rng);
  const Matrix x = rand_matrix(rng, 32, 2, -4, 4);
  const Matrix t = rand_matrix(rng, 32, 1, 0, 1);
  ad::NoGradGuard g;
  const Matrix phi = model::flow_map_apply(net, ad::Tensor(x), ad::Tensor(t), ad::Tensor(t)).value();
  CHECK(phi == x);
  const Matrix z = model::logdensity_map_apply(net, ad::Tensor(x), ad::Tensor(Matrix::Ones(32, 1)), ad::Tensor(t),
                                               ad::Tensor(t)).value();
  CHECK(z == Matrix::Ones(32, 1));
}

TEST_CASE("divergence head output is divided by div_scale") {
  RngStream rng_a(4), rng_b(4);
  auto arch = small_arch(false);
  const model::JointFlowMapModel a(arch, rng_a);
  arch.div_scale = 4.0;
  const model::JointFlowMapModel b(arch, rng_b);
  const Matrix x = Matrix::Ones(3, 2);
  ad::NoGradGuard g;
  const auto oa = a.forward(ad::Tensor(x), model::time_column(3, 0.2), model::time_column(3, 0.7));
  const auto ob = b.forward(ad::Tensor(x), model::time_column(3, 0.2), model::time_column(3, 0.7));
  CHECK((oa.d_head.value() - ob.d_head.value()).norm() == 0.0);
  CHECK((ob.D.value() * 4.0 - oa.D.value()).norm() < 1e-15);
}

TEST_CASE("forward rejects malformed inputs") {
  RngStream rng(5);
  const model::JointFlowMapModel net(small_arch(), rng);
  ad::NoGradGuard g;
  CHECK_THROWS(net.forward(ad::Tensor(Matrix::Ones(3, 3)), model::time_column(3, 0), model::time_column(3, 1)));
  CHECK_THROWS(net.forward(ad::Tensor(Matrix::Ones(3, 2)), model::time_column(2, 0), model::time_column(3, 1)));
  Matrix bad = Matrix::Ones(3, 2);
  bad(1, 1) = std::nan("");
  CHECK_THROWS(net.forward(ad::Tensor(bad), model::time_column(3, 0), model::time_column(3, 1)));
}

TEST_CASE("clone has independent storage") {
  RngStream rng(6);
  model::JointFlowMapModel net(small_arch(false), rng);
  const model::JointFlowMapModel copy = net.clone();
  const Eigen::VectorXd before = copy.flat_parameters();
  Eigen::VectorXd flat = net.flat_parameters();
  flat.setZero();
  net.set_flat_parameters(flat);
  CHECK(copy.flat_parameters() == before);
}

TEST_CASE("linear oracle matches the closed-form flow of v(x) = x") {
  const oracle::LinearFlowMap map;
  const Matrix x = (Matrix(2, 2) << 0.3, -1.2, 2.0, 0.5).finished();
  ad::NoGradGuard g;
  for (double h : {0.0, 1e-6, 0.25, 1.0}) {
    const Matrix phi = model::flow_map_apply(map, ad::Tensor(x), model::time_column(2, 0.0), model::time_column(2, h)).value();
    CHECK((phi - x * std::exp(h)).norm() < 1e-14);
    const auto out = map.forward(ad::Tensor(x), model::time_column(2, 0.0), model::time_column(2, h));
    CHECK(out.D.value().isApprox(col(2, -2.0)));
  }
}

TEST_CASE("cubic oracle matches the closed-form flow of v(x) = -x^3") {
  // x(s) = x / sqrt(1 + 2 h x^2); D = sum over dims of ln(1 + 2 h x^2) * 3 / (2 h).
  const oracle::CubicFlowMap map;
  const Matrix x = (Matrix(3, 2) << 0.3, -1.2, 2.0, 0.5, 1e-3, -0.8).finished();
  ad::NoGradGuard g;
  for (double h : {1e-7, 1e-3, 0.25, 1.0}) {
    const auto out = map.forward(ad::Tensor(x), model::time_column(3, 0.0), model::time_column(3, h));
    const Matrix phi = model::flow_map_apply(map, ad::Tensor(x), model::time_column(3, 0.0), model::time_column(3, h)).value();
    for (Eigen::Index i = 0; i < 3; ++i) {
      double d = 0.0;
      for (Eigen::Index j = 0; j < 2; ++j) {
        const double a = x(i, j);
        CHECK(phi(i, j) == doctest::Approx(a / std::sqrt(1 + 2 * h * a * a)).epsilon(1e-12));
        d += 1.5 * std::log1p(2 * h * a * a) / h;
      }
      CHECK(out.D.value()(i, 0) == doctest::Approx(d).epsilon(1e-10));
    }
  }
}

TEST_CASE("cubic oracle partial derivatives agree with finite differences") {
  const oracle::CubicFlowMap map;
  RngStream rng(7);
  const Matrix x = rand_matrix(rng, 5, 2, -1.5, 1.5);
  const Matrix t = rand_matrix(rng, 5, 1, 0.0, 0.4);
  const Matrix s = rand_matrix(rng, 5, 1, 0.5, 1.0);
  const Matrix dx = rand_matrix(rng, 5, 2);
  const auto j = model::joint_jvp(map, x, t, s, dx, col(5, 0.3), col(5, -0.7));
  constexpr double h = 1e-6;
  const auto up = model::joint_jvp(map, x + h * dx, t + col(5, 0.3 * h), s + col(5, -0.7 * h), dx, col(5, 0), col(5, 0));
  const auto dn = model::joint_jvp(map, x - h * dx, t - col(5, 0.3 * h), s - col(5, -0.7 * h), dx, col(5, 0), col(5, 0));
  CHECK((j.du - (up.u - dn.u) / (2 * h)).norm() < 1e-7);
  CHECK((j.dD - (up.D - dn.D) / (2 * h)).norm() < 1e-7);
}

TEST_CASE("exact oracle maps satisfy every flow-map condition") {
  RngStream rng(8);
  const Matrix x = rand_matrix(rng, 50, 2, -1.5, 1.5);
  Matrix t = rand_matrix(rng, 50, 1, 0, 1);
  Matrix s = rand_matrix(rng, 50, 1, 0, 1);
  {
    const auto r = model::flowmap_residuals(oracle::LinearFlowMap(), x, t, s, oracle::LinearVelocity());
    CHECK(r.lagrangian.maxCoeff() < 1e-8);
    CHECK(r.eulerian.maxCoeff() < 1e-8);
    CHECK(r.semigroup.maxCoeff() < 1e-8);
  }
  {
    const auto r = model::flowmap_residuals(oracle::CubicFlowMap(), x, t, s, oracle::CubicVelocity());
    CHECK(r.lagrangian.maxCoeff() < 1e-8);
    CHECK(r.eulerian.maxCoeff() < 1e-8);
    CHECK(r.semigroup.maxCoeff() < 1e-8);
  }
}

TEST_CASE("semigroup residual vanishes at s = t and a wrong velocity is detected") {
  RngStream rng(9);
  const model::JointFlowMapModel net(small_arch(false), rng);
  const Matrix x = rand_matrix(rng, 20, 2);
  const Matrix t = rand_matrix(rng, 20, 1, 0, 1);
  const auto r = model::flowmap_residuals(net, x, t, t, model::DiagonalVelocity(net));
  CHECK(r.semigroup.maxCoeff() == 0.0);
  const auto wrong = model::flowmap_residuals(oracle::LinearFlowMap(), x, t, col(20, 1.0), oracle::ZeroVelocity());
  CHECK(model::median(wrong.eulerian) > 0.1);
}

TEST_CASE("median of odd and even samples") {
  CHECK(model::median((Eigen::VectorXd(3) << 3, 1, 2).finished()) == 2.0);
  CHECK(model::median((Eigen::VectorXd(4) << 4, 1, 3, 2).finished()) == 2.5);
}

TEST_CASE("checkpoint round trip preserves parameters, optimizer and streams") {
  RngStream rng(10);
  model::JointFlowMapModel net(small_arch(false), rng);
  net.set_divergence_trained(true);
  auto ckpt = model::Checkpoint::from_model(net, "f2d2", 123);
  ad::AdamState adam = ad::AdamState::for_params(net.parameters(), ad::AdamConfig{.lr = 3e-4});
  adam.step = 17;
  adam.first_moment[0].setConstant(0.5);
  ckpt.optimizer = adam;
  ckpt.streams.push_back({"data/f2d2", 99, 4242});
  const auto path = temp_path("roundtrip.ckpt");
  model::save_checkpoint(ckpt, path);
  const auto back = model::load_checkpoint(path);
  CHECK(back.architecture == net.architecture());
  CHECK(back.stage == "f2d2");
  CHECK(back.step == 123);
  CHECK(back.parameters == net.flat_parameters());
  CHECK(back.divergence_trained);
  REQUIRE(back.optimizer.has_value());
  CHECK(back.optimizer->step == 17);
  CHECK(back.optimizer->config.lr == 3e-4);
  CHECK(back.optimizer->first_moment[0] == adam.first_moment[0]);
  REQUIRE(back.streams.size() == 1);
  CHECK(back.streams[0].name == "data/f2d2");
  CHECK(back.streams[0].position == 4242);
  const auto restored = back.to_model();
  CHECK(restored.flat_parameters() == net.flat_parameters());
  CHECK(restored.divergence_trained());
  std::filesystem::remove(path);
}

TEST_CASE("corrupt, truncated and foreign checkpoint files are rejected") {
  RngStream rng(11);
  const model::JointFlowMapModel net(small_arch(), rng);
  const auto path = temp_path("corrupt.ckpt");
  model::save_checkpoint(model::Checkpoint::from_model(net, "x", 0), path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };

  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  write(flipped);
  CHECK_THROWS_AS(model::load_checkpoint(path), model::CheckpointError);

  write(bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(model::load_checkpoint(path), model::CheckpointError);

  write("not a checkpoint at all");
  CHECK_THROWS_WITH_AS(model::load_checkpoint(path), doctest::Contains("not an F2D2 checkpoint"), model::CheckpointError);

  std::string version = bytes;
  version[8] = 7;
  write(version);
  CHECK_THROWS_WITH_AS(model::load_checkpoint(path), doctest::Contains("unsupported version"), model::CheckpointError);

  std::filesystem::remove(path);
  CHECK_THROWS_AS(model::load_checkpoint(path), model::CheckpointError);
}
