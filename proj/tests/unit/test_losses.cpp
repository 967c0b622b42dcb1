#include "f2d2/model/joint_model.hpp"
#include "f2d2/model/oracles.hpp"
#include "f2d2/train/losses.hpp"

#include <doctest.h>

using namespace f2d2;
using model::Matrix;

namespace {

// Batch for the flow of v(x) = x (or -x^3) with arbitrary (t, s): endpoints are
// irrelevant, only x_t, t, s and the instantaneous target matter.
data::InterpolantBatch oracle_batch(RngStream& rng, Eigen::Index n, bool same_time, bool cubic) {
  Matrix x0(n, 2), x1(n, 2), t(n, 1), s(n, 1);
  rng.fill_uniform(x0, -1.5, 1.5);
  rng.fill_uniform(x1, -1.5, 1.5);
  rng.fill_uniform(t);
  rng.fill_uniform(s);
  if (same_time) s = t;
  // The cubic flow only exists forward in time; the linear one also runs backward.
  if (cubic) {
    const Matrix lo = t.cwiseMin(s);
    s = t.cwiseMax(s);
    t = lo;
  }
  auto b = data::make_interpolant_batch(x0, x1, t, s);
  b.v_target = cubic ? Matrix(-b.xt.array().cube()) : b.xt;
  return b;
}

model::Architecture arch(bool zero_heads) {
  model::Architecture a;
  a.hidden_width = 16;
  a.hidden_layers = 2;
  a.div_head_hidden = {8};
  a.zero_init_heads = zero_heads;
  a.div_scale = 2.0;
  return a;
}

}  // namespace

TEST_CASE("every objective vanishes on exact joint flow maps") {
  RngStream rng(1);
  const oracle::LinearFlowMap linear;
  const oracle::CubicFlowMap cubic;
  const oracle::LinearVelocity v_lin;
  const oracle::CubicVelocity v_cub;
  for (int which = 0; which < 2; ++which) {
    const bool is_cubic = which == 1;
    const model::JointFlowMap& map = is_cubic ? static_cast<const model::JointFlowMap&>(cubic) : linear;
    const model::VelocityField& field = is_cubic ? static_cast<const model::VelocityField&>(v_cub) : v_lin;
    const train::DivergenceSource src{&field, train::TraceMode::exact(), nullptr};
    const auto inst = oracle_batch(rng, 64, true, is_cubic);
    const auto pairs = oracle_batch(rng, 64, false, is_cubic);
    ad::NoGradGuard g;
    CHECK(train::loss_flow_matching(map, inst).item() < 1e-20);
    CHECK(train::loss_flow_matching(map, inst, &field).item() < 1e-20);
    CHECK(train::loss_div_match(map, inst, src).item() < 1e-20);
    CHECK(train::loss_shortcut_consistency(map, pairs).item() < 1e-18);
    CHECK(train::loss_div_consistency(map, pairs).item() < 1e-18);
    CHECK(train::loss_meanflow(map, pairs).item() < 1e-18);
    CHECK(train::loss_meanflow_div(map, pairs, src).item() < 1e-18);
    CHECK(train::loss_lagrangian_div(map, pairs, src).item() < 1e-18);
  }
}

TEST_CASE("MeanFlow loss at s = t equals flow matching bit for bit") {
  RngStream rng(2);
  const model::JointFlowMapModel net(arch(false), rng);
  const auto b = data::make_interpolant_batch(rng, data::Density::checkerboard(), 64, data::TimeScheme::kUniformT);
  ad::NoGradGuard g;
  CHECK(train::loss_meanflow(net, b).item() == train::loss_flow_matching(net, b).item());
}

TEST_CASE("flow matching on a zero-initialised model is the mean squared target") {
  RngStream rng(3);
  const model::JointFlowMapModel net(arch(true), rng);
  const auto b = data::make_interpolant_batch(rng, data::Density::checkerboard(), 64, data::TimeScheme::kUniformT);
  ad::NoGradGuard g;
  CHECK(train::loss_flow_matching(net, b).item() == doctest::Approx(b.v_target.rowwise().squaredNorm().mean()));
}

TEST_CASE("shortcut consistency target is a stop-gradient branch") {
  RngStream rng(4);
  model::JointFlowMapModel net(arch(false), rng);
  const auto b = data::make_interpolant_batch(rng, data::Density::checkerboard(), 32, data::TimeScheme::kDiscreteGrid);
  const auto n = b.size();

  // Target built by hand without recording.
  Matrix target;
  {
    ad::NoGradGuard g;
    const Matrix r = 0.5 * (b.t + b.s);
    const Matrix u1 = net.forward(ad::Tensor(b.xt), ad::Tensor(b.t), ad::Tensor(r)).u.value();
    const Matrix xr = b.xt + (u1.array().colwise() * (r - b.t).col(0).array()).matrix();
    const Matrix u2 = net.forward(ad::Tensor(xr), ad::Tensor(r), ad::Tensor(b.s)).u.value();
    target = 0.5 * (u1 + u2);
  }
  std::vector<Matrix> g_loss, g_manual;
  {
    ad::Tape tape;
    g_loss = ad::grad(train::loss_shortcut_consistency(net, b), net.parameters());
  }
  {
    ad::Tape tape;
    const auto u = net.forward(ad::Tensor(b.xt), ad::Tensor(b.t), ad::Tensor(b.s)).u;
    const auto loss = ad::scale(ad::sum(ad::square(u - ad::Tensor(target))), 1.0 / static_cast<double>(n));
    g_manual = ad::grad(loss, net.parameters());
  }
  for (std::size_t i = 0; i < g_loss.size(); ++i) CHECK((g_loss[i] - g_manual[i]).norm() <= 1e-12 * (1 + g_manual[i].norm()));
}

TEST_CASE("divergence loss targets are scaled by div_scale") {
  RngStream rng(5);
  const model::JointFlowMapModel net(arch(true), rng);  // d_head == 0
  const oracle::LinearVelocity field;
  const train::DivergenceSource src{&field, train::TraceMode::exact(), nullptr};
  const auto b = data::make_interpolant_batch(rng, data::Density::checkerboard(), 16, data::TimeScheme::kUniformT);
  ad::NoGradGuard g;
  // target = -div * scale = -2 * 2
  CHECK(train::loss_div_match(net, b, src).item() == doctest::Approx(16.0));
}

TEST_CASE("loss term totals weight divergence terms by lambda") {
  train::LossTerms a;
  a.vm = 1;
  a.u_sc = 2;
  a.div = 3;
  a.d_sc = 4;
  a.lambda_div = 0.5;
  CHECK(a.total() == doctest::Approx(1 + 2 + 0.5 * 7));
  train::LossTerms sum = a;
  sum += a;
  CHECK(sum.scaled(0.5).vm == doctest::Approx(1.0));
}
