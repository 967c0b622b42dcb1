#include "f2d2/harness/acceptance.hpp"

#include "f2d2/autodiff/derivatives.hpp"
#include "f2d2/data/density.hpp"
#include "f2d2/eval/metrics.hpp"
#include "f2d2/harness/commands.hpp"
#include "f2d2/model/checkpoint.hpp"
#include "f2d2/model/oracles.hpp"
#include "f2d2/model/residuals.hpp"
#include "f2d2/sampling/guidance.hpp"
#include "f2d2/sampling/likelihood.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <sstream>

namespace f2d2::acceptance {

namespace fs = std::filesystem;
using ad::Matrix;
using ad::Tensor;

bool CriterionResult::pass() const {
  if (checks.empty()) return false;
  for (const auto& c : checks) {
    if (!c.pass) return false;
  }
  return true;
}

void CriterionResult::print(std::ostream& out) const {
  out << (pass() ? "[PASS]" : "[FAIL]") << " criterion " << id << ": " << title << " (" << std::fixed
      << std::setprecision(1) << seconds << " s)\n";
  out << std::defaultfloat << std::setprecision(6);
  for (const auto& c : checks) {
    out << "    " << (c.pass ? "ok   " : "FAIL ") << c.what << ": " << c.value << " (bound " << c.bound << ")\n";
  }
  if (!note.empty()) out << "    note: " << note << '\n';
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

Check at_most(std::string what, double value, double bound) {
  return {std::move(what), value, bound, std::isfinite(value) && value <= bound};
}

Check at_least(std::string what, double value, double bound) {
  return {std::move(what), value, bound, std::isfinite(value) && value >= bound};
}

// ---- random MLPs for the autodiff checks -------------------------------------

struct RandomMlp {
  std::vector<Tensor> params;  // W0, b0, W1, b1, ...
  bool gelu = true;

  RandomMlp(RngStream& rng, int d_in, int d_out) {
    const int hidden = 1 + static_cast<int>(rng.index(4));
    gelu = rng.uniform() < 0.5;
    int in = d_in;
    for (int l = 0; l <= hidden; ++l) {
      const int out = l == hidden ? d_out : 4 + static_cast<int>(rng.index(61));
      Matrix w(in, out), b(1, out);
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      rng.fill_uniform(w, -bound, bound);
      rng.fill_uniform(b, -bound, bound);
      params.push_back(Tensor::parameter(w));
      params.push_back(Tensor::parameter(b));
      in = out;
    }
  }

  Tensor operator()(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t p = 0; p < params.size(); p += 2) {
      h = ad::linear(h, params[p], params[p + 1]);
      if (p + 2 < params.size()) h = gelu ? ad::gelu(h) : ad::silu(h);
    }
    return h;
  }
};

double rel_error(const Matrix& a, const Matrix& b) {
  const double denom = std::max({a.norm(), b.norm(), 1e-8});
  return (a - b).norm() / denom;
}

// ---- trained-run loading -----------------------------------------------------

struct TrainedRun {
  model::JointFlowMapModel teacher;
  model::JointFlowMapModel f2d2;
};

TrainedRun load_run(const harness::RunConfig& cfg, const fs::path& run_dir) {
  const train::StageConfig* teacher = harness::teacher_stage(cfg);
  if (teacher == nullptr) throw std::runtime_error("config has no flow-matching (teacher) stage");
  const train::StageConfig& last = harness::final_stage(cfg);
  return {model::load_checkpoint(run_dir / (teacher->name + ".ckpt")).to_model(),
          model::load_checkpoint(run_dir / (last.name + ".ckpt")).to_model()};
}

Matrix heldout_points(const harness::RunConfig& cfg, Eigen::Index n) {
  RngStream rng = RngStream::named(cfg.seed, "acceptance/heldout");
  Matrix pts = cfg.density.sample(rng, n);
  const Eigen::VectorXd lp = cfg.density.logpdf(pts);
  Eigen::Index m = 0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    if (std::isfinite(lp[i])) pts.row(m++) = pts.row(i);
  }
  return pts.topRows(m);
}

// Training wall-clock per stage: the last elapsed value logged for it.
double training_seconds(const fs::path& run_dir) {
  std::ifstream in(run_dir / "timing.csv");
  if (!in) return std::nan("");
  std::string line;
  std::getline(in, line);
  std::map<std::string, double> last;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string stage, step, elapsed;
    std::getline(ss, stage, ',');
    std::getline(ss, step, ',');
    std::getline(ss, elapsed, ',');
    if (!elapsed.empty()) last[stage] = std::stod(elapsed);
  }
  double total = 0.0;
  for (const auto& [_, s] : last) total += s;
  return total;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

CriterionResult autodiff_correctness(std::uint64_t seed) {
  const auto start = Clock::now();
  CriterionResult r{1, "autodiff gradients and JVPs match central finite differences", {}, {}, 0.0};
  RngStream rng = RngStream::named(seed, "acceptance/autodiff");
  constexpr double h = 1e-5;
  double worst_grad = 0.0;
  double worst_jvp = 0.0;
  for (int m = 0; m < 100; ++m) {
    const int d_in = 1 + static_cast<int>(rng.index(8));
    const int d_out = 1 + static_cast<int>(rng.index(8));
    RandomMlp mlp(rng, d_in, d_out);
    Matrix x(3, d_in), weights(3, d_out);
    rng.fill_normal(x);
    rng.fill_normal(weights);
    auto loss_of = [&](const Tensor& in) {
      return ad::scale(ad::sum(mlp(in) * Tensor(weights)), 1.0 / 3.0);
    };

    std::vector<Matrix> grads;
    {
      ad::Tape tape;
      grads = ad::grad(loss_of(Tensor(x)), mlp.params);
    }
    ad::NoGradGuard no_grad;
    for (std::size_t p = 0; p < mlp.params.size(); ++p) {
      Matrix& value = mlp.params[p].mutable_value();
      const int probes = static_cast<int>(std::min<Eigen::Index>(8, value.size()));
      Matrix analytic(probes, 1), numeric(probes, 1);
      for (int q = 0; q < probes; ++q) {
        const auto idx = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(value.size())));
        const double saved = value.data()[idx];
        value.data()[idx] = saved + h;
        const double up = loss_of(Tensor(x)).item();
        value.data()[idx] = saved - h;
        const double down = loss_of(Tensor(x)).item();
        value.data()[idx] = saved;
        analytic(q, 0) = grads[p].data()[idx];
        numeric(q, 0) = (up - down) / (2.0 * h);
      }
      worst_grad = std::max(worst_grad, rel_error(analytic, numeric));
    }

    Matrix v(3, d_in);
    rng.fill_normal(v);
    const ad::JvpResult j = ad::jvp([&](const Tensor& in) { return mlp(in); }, Tensor(x), v);
    const Matrix fd = (mlp(Tensor(Matrix(x + h * v))).value() - mlp(Tensor(Matrix(x - h * v))).value()) / (2.0 * h);
    worst_jvp = std::max(worst_jvp, rel_error(j.derivative, fd));
  }
  r.checks.push_back(at_most("max relative gradient error over 100 MLPs", worst_grad, kGradRelTol));
  r.checks.push_back(at_most("max relative JVP error over 100 MLPs", worst_jvp, kJvpRelTol));
  r.seconds = since(start);
  r.checks.push_back(at_most("runtime seconds", r.seconds, 60.0));
  return r;
}

CriterionResult trace_estimation(std::uint64_t seed) {
  const auto start = Clock::now();
  CriterionResult r{2, "exact and Hutchinson trace estimation", {}, {}, 0.0};
  RngStream rng = RngStream::named(seed, "acceptance/trace");
  constexpr double h = 1e-5;

  double worst_exact = 0.0;
  for (int m = 0; m < 20; ++m) {
    RandomMlp mlp(rng, 2, 2);
    Matrix x(16, 2);
    rng.fill_normal(x);
    const ad::TensorFn fn = [&](const Tensor& in) { return mlp(in); };
    const ad::TraceResult tr = ad::jacobian_trace_exact(fn, Tensor(x));
    ad::NoGradGuard no_grad;
    Eigen::VectorXd fd = Eigen::VectorXd::Zero(x.rows());
    for (int i = 0; i < 2; ++i) {
      Matrix up = x, down = x;
      up.col(i).array() += h;
      down.col(i).array() -= h;
      fd += (mlp(Tensor(up)).value().col(i) - mlp(Tensor(down)).value().col(i)) / (2.0 * h);
    }
    worst_exact = std::max(worst_exact, (tr.trace.col(0) - fd).cwiseAbs().maxCoeff());
  }
  r.checks.push_back(at_most("exact trace vs finite-difference diagonal (max abs)", worst_exact, kTraceTol));

  double worst_diag = 0.0;
  for (int m = 0; m < 10; ++m) {
    Matrix x(32, 3);
    rng.fill_normal(x);
    const double c = rng.uniform(0.5, 2.0);
    const ad::TensorFn fn = [c](const Tensor& in) { return ad::scale(ad::gelu(in), c) + ad::sin(in); };
    const ad::TraceResult exact = ad::jacobian_trace_exact(fn, Tensor(x));
    const ad::TraceResult hutch = ad::hutchinson_trace(fn, Tensor(x), 1, rng);
    worst_diag = std::max(worst_diag, (exact.trace - hutch.trace).cwiseAbs().maxCoeff());
  }
  r.checks.push_back(at_most("Rademacher Hutchinson on diagonal Jacobians (max abs)", worst_diag, 1e-12));

  double worst_z = 0.0;
  for (int m = 0; m < 10; ++m) {
    Matrix a(2, 2);
    rng.fill_normal(a);
    const Tensor at(Matrix(a.transpose()));
    const ad::TensorFn fn = [&](const Tensor& in) { return ad::matmul(in, at); };
    // 10^4 rows, one probe each: independent single-probe estimates.
    const Matrix x = Matrix::Zero(10000, 2);
    const ad::TraceResult hutch = ad::hutchinson_trace(fn, Tensor(x), 1, rng);
    const double mean = hutch.trace.mean();
    const double sd = std::sqrt((hutch.trace.array() - mean).square().sum() / (hutch.trace.rows() - 1));
    const double se = sd / std::sqrt(static_cast<double>(hutch.trace.rows()));
    const double err = std::abs(mean - a.trace());
    worst_z = std::max(worst_z, se > 0 ? err / se : (err == 0 ? 0.0 : INFINITY));
  }
  r.checks.push_back(at_most("10^4-probe mean on random 2x2 maps (max |z|)", worst_z, 3.0));
  r.seconds = since(start);
  r.checks.push_back(at_most("runtime seconds", r.seconds, 60.0));
  return r;
}

CriterionResult linear_flow_oracle(std::uint64_t seed) {
  const auto start = Clock::now();
  CriterionResult r{3, "analytic linear-flow oracle", {}, {}, 0.0};
  RngStream rng = RngStream::named(seed, "acceptance/linear");
  Matrix x1(2000, 2);
  rng.fill_normal(x1);
  x1 *= std::exp(1.0);  // samples of p_1 for v(x) = x
  const Eigen::VectorXd truth = oracle::linear_flow_logp1(x1);
  const oracle::LinearVelocity field;

  auto reference_error = [&](int n) {
    return (sampling::likelihood_reference(field, x1, n).log_density - truth).cwiseAbs().mean();
  };
  r.checks.push_back(at_most("256-step reference, mean |error| (nats)", reference_error(256), kLinearReferenceTol));

  const oracle::LinearFlowMap exact;
  double worst = 0.0;
  for (int k : {1, 2, 4, 8}) {
    worst = std::max(worst, (sampling::likelihood_fewstep(exact, x1, k).log_density - truth).cwiseAbs().maxCoeff());
  }
  r.checks.push_back(at_most("exact map + constant D, K in {1,2,4,8}, max |error|", worst, kLinearExactTol));

  double min_ratio = INFINITY, max_ratio = 0.0;
  double prev = reference_error(32);
  for (int n : {64, 128, 256, 512}) {
    const double cur = reference_error(n);
    const double ratio = prev / cur;
    min_ratio = std::min(min_ratio, ratio);
    max_ratio = std::max(max_ratio, ratio);
    prev = cur;
  }
  r.checks.push_back(at_least("error ratio per step halving, min (32..512 steps)", min_ratio, 1.8));
  r.checks.push_back(at_most("error ratio per step halving, max (32..512 steps)", max_ratio, 2.2));
  r.seconds = since(start);
  return r;
}

CriterionResult meanflow_identity(std::uint64_t seed) {
  const auto start = Clock::now();
  CriterionResult r{4, "Eulerian residual equals the negated MeanFlow residual", {}, {}, 0.0};
  RngStream rng = RngStream::named(seed, "acceptance/meanflow");
  double worst = 0.0;
  for (int m = 0; m < 50; ++m) {
    model::Architecture arch;
    arch.hidden_width = 8 + static_cast<int>(rng.index(57));
    arch.hidden_layers = 1 + static_cast<int>(rng.index(4));
    arch.activation = rng.uniform() < 0.5 ? model::Activation::kGelu : model::Activation::kSilu;
    arch.zero_init_heads = false;
    const model::JointFlowMapModel net(arch, rng);
    const model::DiagonalVelocity v(net);
    Matrix x(16, 2), t(16, 1), s(16, 1);
    rng.fill_normal(x);
    rng.fill_uniform(t);
    rng.fill_uniform(s);
    const model::EulerianMeanFlowPair pair = model::eulerian_meanflow_pair(net, x, t, s, v);
    worst = std::max(worst, (pair.eulerian + pair.meanflow).cwiseAbs().maxCoeff());
  }
  r.checks.push_back(at_most("max |eulerian + meanflow| over 50 networks", worst, kCorollaryTol));
  r.seconds = since(start);
  return r;
}

CriterionResult checkerboard_pipeline(const harness::RunConfig& cfg, const fs::path& run_dir) {
  const auto start = Clock::now();
  CriterionResult r{5, "checkerboard pipeline calibration", {}, {}, 0.0};
  const TrainedRun run = load_run(cfg, run_dir);
  const Matrix pts = heldout_points(cfg, 10000);
  const Eigen::VectorXd truth = cfg.density.logpdf(pts);
  const model::DiagonalVelocity teacher(run.teacher);
  const int ref_steps = cfg.eval.reference_steps;

  const Eigen::VectorXd reference = sampling::likelihood_reference(teacher, pts, ref_steps).log_density;
  r.checks.push_back(at_most("(a) teacher " + std::to_string(ref_steps) + "-step NLL mean |error| (nats)",
                             (reference - truth).cwiseAbs().mean(), kTeacherNllTol));

  Eigen::VectorXd fewstep_k1;
  for (int k : {1, 2, 4, 8}) {
    const Eigen::VectorXd lp = sampling::likelihood_fewstep(run.f2d2, pts, k).log_density;
    if (k == 1) fewstep_k1 = lp;
    r.checks.push_back(at_most("(b) F2D2 K=" + std::to_string(k) + " NLL mean |error| (nats)",
                               (lp - truth).cwiseAbs().mean(), kFewStepNllTol));
  }

  const Eigen::VectorXd baseline = sampling::likelihood_reference(teacher, pts, 1).log_density;
  r.checks.push_back(at_least("(c) baseline K=1 NLL mean |error| (nats)", (baseline - truth).cwiseAbs().mean(),
                              kBaselineMinError));

  const double f2d2_vs_ref = (fewstep_k1 - reference).cwiseAbs().mean();
  const double base_vs_ref = (baseline - reference).cwiseAbs().mean();
  r.checks.push_back(at_least("(d) baseline / F2D2 per-sample error vs reference at K=1",
                              base_vs_ref / f2d2_vs_ref, kImprovementRatio));
  r.note = "per-sample error vs reference: F2D2 " + std::to_string(f2d2_vs_ref) + ", baseline " +
           std::to_string(base_vs_ref);

  r.seconds = since(start);
  const double train_s = training_seconds(run_dir);
  r.checks.push_back(at_most("training + evaluation wall-clock (s)", train_s + r.seconds, kPipelineSeconds));
  return r;
}

CriterionResult flowmap_conditions(const harness::RunConfig& cfg, const fs::path& run_dir) {
  const auto start = Clock::now();
  CriterionResult r{6, "flow-map residuals shrink with training", {}, {}, 0.0};
  const TrainedRun run = load_run(cfg, run_dir);
  model::Architecture arch = cfg.architecture;
  arch.zero_init_heads = false;
  RngStream init = RngStream::named(cfg.seed, "acceptance/untrained");
  const model::JointFlowMapModel untrained(arch, init);

  RngStream rng = RngStream::named(cfg.seed, "acceptance/residual-points");
  const auto batch = data::make_interpolant_batch(rng, cfg.density, 2000, data::TimeScheme::kUniformPairs);

  const model::DiagonalVelocity trained_v(run.f2d2);
  const model::DiagonalVelocity untrained_v(untrained);
  const auto trained = model::flowmap_residuals(run.f2d2, batch.xt, batch.t, batch.s, trained_v);
  const auto fresh = model::flowmap_residuals(untrained, batch.xt, batch.t, batch.s, untrained_v);

  const double sg = model::median(trained.semigroup) / model::median(fresh.semigroup);
  const double eu = model::median(trained.eulerian) / model::median(fresh.eulerian);
  r.checks.push_back(at_most("median semigroup residual, trained / untrained", sg, kResidualRatio));
  r.checks.push_back(at_most("median Eulerian residual, trained / untrained", eu, kResidualRatio));
  std::ostringstream note;
  note << "medians trained/untrained: semigroup " << model::median(trained.semigroup) << "/"
       << model::median(fresh.semigroup) << ", eulerian " << model::median(trained.eulerian) << "/"
       << model::median(fresh.eulerian) << ", lagrangian " << model::median(trained.lagrangian) << "/"
       << model::median(fresh.lagrangian);
  r.note = note.str();
  r.seconds = since(start);
  return r;
}

CriterionResult self_guidance(const harness::RunConfig& cfg, const fs::path& run_dir) {
  const auto start = Clock::now();
  CriterionResult r{7, "one-step maximum-likelihood self-guidance", {}, {}, 0.0};
  const TrainedRun run = load_run(cfg, run_dir);
  constexpr int kSeeds = 1024;
  Matrix x0(kSeeds, cfg.density.dim());
  for (int i = 0; i < kSeeds; ++i) {
    RngStream rng = RngStream::named(static_cast<std::uint64_t>(i), "guide");
    Matrix row(1, x0.cols());
    rng.fill_normal(row);
    x0.row(i) = row;
  }
  sampling::GuidanceConfig g;
  g.steps = 1;
  g.k_samp = 1;
  const sampling::GuidedSamples guided = sampling::guide_from(run.f2d2, x0, g);
  const Eigen::Index decreased =
      (guided.surrogate_trace.col(1).array() < guided.surrogate_trace.col(0).array()).count();
  r.checks.push_back(at_least("fraction of seeds with lower surrogate NLL after one step",
                              static_cast<double>(decreased) / kSeeds, kGuidanceFraction));

  const Matrix unguided = sampling::euler_sample(run.f2d2, x0, g.k_samp).back();
  RngStream data_rng = RngStream::named(cfg.seed, "acceptance/guidance-data");
  const Matrix data = cfg.density.sample(data_rng, 4096);
  const double e_guided = eval::energy_distance(guided.samples, data);
  const double e_plain = eval::energy_distance(unguided, data);
  r.checks.push_back(at_most("energy distance guided / unguided", e_guided / e_plain, kEnergySlack));
  r.note = "energy distance guided " + std::to_string(e_guided) + ", unguided " + std::to_string(e_plain);
  r.seconds = since(start);
  return r;
}

CriterionResult determinism(const harness::RunConfig& cfg, const fs::path& run_dir, const fs::path& rerun_dir) {
  const auto start = Clock::now();
  CriterionResult r{8, "identical seeds give byte-identical metrics", {}, {}, 0.0};
  train::TrainingContext ctx(cfg.seed, cfg.density, cfg.architecture, rerun_dir);
  train::run_plan(cfg.plan, ctx);
  for (const char* name : {"metrics.csv", "validation.csv"}) {
    const std::string a = slurp(run_dir / name);
    const std::string b = slurp(rerun_dir / name);
    const bool same = !a.empty() && a == b;
    r.checks.push_back({std::string(name) + " byte-identical (size " + std::to_string(a.size()) + ")",
                        same ? 1.0 : 0.0, 1.0, same});
  }
  r.seconds = since(start);
  return r;
}

int run_criteria(const std::vector<int>& ids, const fs::path& config, const fs::path& run_dir,
                 const fs::path& rerun_dir, std::ostream& out) {
  harness::retain_freed_memory();
  bool all = true;
  for (int id : ids) {
    CriterionResult r;
    try {
      switch (id) {
        case 1: r = autodiff_correctness(); break;
        case 2: r = trace_estimation(); break;
        case 3: r = linear_flow_oracle(); break;
        case 4: r = meanflow_identity(); break;
        case 5: r = checkerboard_pipeline(harness::load_config(config), run_dir); break;
        case 6: r = flowmap_conditions(harness::load_config(config), run_dir); break;
        case 7: r = self_guidance(harness::load_config(config), run_dir); break;
        case 8: r = determinism(harness::load_config(config), run_dir, rerun_dir); break;
        default: throw std::invalid_argument("unknown criterion " + std::to_string(id));
      }
    } catch (const std::exception& e) {
      r = CriterionResult{id, "could not run", {}, e.what(), 0.0};
    }
    r.print(out);
    out.flush();
    all = all && r.pass();
  }
  return all ? 0 : 1;
}

}  // namespace f2d2::acceptance
