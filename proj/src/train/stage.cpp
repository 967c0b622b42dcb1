#include "f2d2/train/stage.hpp"

#include "f2d2/autodiff/optim.hpp"
#include "f2d2/sampling/likelihood.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>

namespace f2d2::train {

namespace fs = std::filesystem;

std::string to_string(StageKind k) {
  switch (k) {
    case StageKind::kFlowMatching: return "flow_matching";
    case StageKind::kShortcut: return "shortcut";
    case StageKind::kShortcutF2D2: return "shortcut_f2d2";
    case StageKind::kMeanFlowF2D2: return "meanflow_f2d2";
  }
  return "?";
}

StageKind parse_stage_kind(const std::string& s) {
  for (auto k : {StageKind::kFlowMatching, StageKind::kShortcut, StageKind::kShortcutF2D2,
                 StageKind::kMeanFlowF2D2}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown stage kind '" + s + "'");
}

std::string to_string(Supervision s) {
  switch (s) {
    case Supervision::kData: return "data";
    case Supervision::kTeacher: return "teacher";
    case Supervision::kSelf: return "self";
  }
  return "?";
}

Supervision parse_supervision(const std::string& s) {
  for (auto v : {Supervision::kData, Supervision::kTeacher, Supervision::kSelf}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown supervision '" + s + "'");
}

bool StageConfig::needs_teacher() const {
  return velocity_target == Supervision::kTeacher ||
         (trains_divergence() && divergence_source == Supervision::kTeacher);
}

void StagePlan::validate() const {
  std::set<std::string> seen;
  std::set<std::string> all;
  for (const auto& st : stages) all.insert(st.name);
  for (const auto& st : stages) {
    auto fail = [&](const std::string& why) {
      throw std::invalid_argument("stage '" + st.name + "': " + why);
    };
    if (st.name.empty()) throw std::invalid_argument("every stage needs a name");
    if (seen.count(st.name)) fail("duplicate stage name");
    if (st.steps < 0) fail("steps must be non-negative");
    if (st.batch_size < 1) fail("batch_size must be positive");
    if (st.has_consistency() && st.batch_size < 2) fail("batch_size must be at least 2 with consistency terms");
    if (!(st.fm_fraction > 0.0 && st.fm_fraction < 1.0)) fail("fm_fraction must lie in (0, 1)");
    if (!(st.lr > 0.0)) fail("lr must be positive");
    if (st.lambda_div < 0.0) fail("lambda_div must be non-negative");
    if (st.reverse_fraction < 0.0 || st.reverse_fraction > 1.0) fail("reverse_fraction must lie in [0, 1]");
    if (st.trace.kind == TraceMode::Kind::kHutchinson && st.trace.probes < 1) fail("probes must be at least 1");
    if (st.velocity_target == Supervision::kSelf) fail("velocity_target must be data or teacher");
    if (st.trains_divergence() && st.divergence_source == Supervision::kData) {
      fail("divergence losses need a velocity source (teacher or self)");
    }
    if (st.lagrangian && st.kind != StageKind::kShortcutF2D2) fail("lagrangian applies to shortcut_f2d2 only");
    if (st.early_stopping.enabled && (st.early_stopping.every < 1 || st.early_stopping.holdout < 1 ||
                                      st.early_stopping.ks.empty())) {
      fail("early stopping needs every >= 1, holdout >= 1 and a K list");
    }
    if (st.ema_rate < 0.0 || st.ema_rate >= 1.0) fail("ema_rate must lie in [0, 1)");
    if (st.log_every < 1) fail("log_every must be positive");
    for (const std::string* ref : {&st.warm_start, &st.teacher}) {
      if (ref->empty()) continue;
      if (all.count(*ref) && !seen.count(*ref)) fail("'" + *ref + "' refers to a later stage");
      if (*ref == st.name) fail("a stage cannot reference itself");
    }
    if (st.needs_teacher() && st.teacher.empty()) fail("teacher supervision needs a teacher reference");
    seen.insert(st.name);
  }
}

std::string StageSummary::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["kind"] = kind;
  j["steps_run"] = steps_run;
  j["skipped"] = skipped;
  j["final"] = {{"total", final_terms.total()}, {"vm", final_terms.vm},     {"u_sc", final_terms.u_sc},
                {"div", final_terms.div},       {"d_sc", final_terms.d_sc}, {"mf", final_terms.mf},
                {"mf_div", final_terms.mf_div}, {"lag", final_terms.lag}};
  if (best_validation) {
    j["best_validation"] = *best_validation;
    j["best_step"] = best_step;
  }
  j["checkpoint"] = checkpoint;
  return j.dump(2);
}

TrainingContext::TrainingContext(std::uint64_t seed, data::Density density, model::Architecture arch,
                                 fs::path out_dir)
    : seed_(seed), density_(std::move(density)), arch_(std::move(arch)), out_dir_(std::move(out_dir)) {
  fs::create_directories(out_dir_);
}

model::JointFlowMapModel TrainingContext::resolve(const std::string& ref, const std::string& stage) const {
  if (auto it = models_.find(ref); it != models_.end()) return it->second->clone();
  if (!fs::exists(ref)) {
    throw ReferenceError("stage '" + stage + "': '" + ref + "' is neither an earlier stage nor an existing checkpoint");
  }
  model::Checkpoint ckpt = model::load_checkpoint(ref);
  if (!(ckpt.architecture == arch_)) {
    throw ReferenceError("stage '" + stage + "': checkpoint '" + ref + "' has a different architecture");
  }
  return ckpt.to_model();
}

void TrainingContext::store(const std::string& stage, model::JointFlowMapModel m) {
  models_[stage] = std::make_unique<model::JointFlowMapModel>(std::move(m));
}

const model::JointFlowMapModel& TrainingContext::get(const std::string& stage) const {
  auto it = models_.find(stage);
  if (it == models_.end()) throw ReferenceError("no trained model for stage '" + stage + "'");
  return *it->second;
}

namespace {

std::unique_ptr<std::ostream> open_csv(const fs::path& path, const char* header) {
  auto out = std::make_unique<std::ofstream>(path, std::ios::trunc);
  if (!*out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  *out << header << '\n' << std::setprecision(17);
  return out;
}

}  // namespace

std::ostream& TrainingContext::metrics() {
  if (!metrics_) {
    metrics_ = open_csv(out_dir_ / "metrics.csv",
                        "stage,step,total,vm,u_sc,div,d_sc,mf,mf_div,lag,lr,grad_norm,skipped");
  }
  return *metrics_;
}

std::ostream& TrainingContext::validation() {
  if (!validation_) validation_ = open_csv(out_dir_ / "validation.csv", "stage,step,k,mean_abs_nll_error");
  return *validation_;
}

std::ostream& TrainingContext::timing() {
  if (!timing_) timing_ = open_csv(out_dir_ / "timing.csv", "stage,step,elapsed_seconds");
  return *timing_;
}

double fewstep_validation_error(const model::JointFlowMap& map, const data::Density& density,
                                const Matrix& points, const std::vector<int>& ks) {
  const Eigen::VectorXd truth = density.logpdf(points);
  double total = 0.0;
  for (int k : ks) {
    const auto report = sampling::likelihood_fewstep(map, points, k);
    total += (report.log_density - truth).cwiseAbs().mean();
  }
  return total / static_cast<double>(ks.size());
}

namespace {

Matrix on_support_holdout(const data::Density& density, std::uint64_t seed, int n) {
  RngStream rng = RngStream::named(seed, "holdout");
  Matrix pts = density.sample(rng, n);
  const Eigen::VectorXd lp = density.logpdf(pts);
  Matrix kept(n, pts.cols());
  Eigen::Index m = 0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    if (std::isfinite(lp[i])) kept.row(m++) = pts.row(i);
  }
  return kept.topRows(m);
}

struct StepOutcome {
  Tensor total;
  LossTerms terms;
};

}  // namespace

StageSummary run_stage(const StagePlan& plan, std::size_t index, TrainingContext& ctx) {
  const StageConfig& cfg = plan.stages.at(index);
  const auto started = std::chrono::steady_clock::now();

  std::optional<model::JointFlowMapModel> maybe_model;
  if (cfg.warm_start.empty()) {
    RngStream init = RngStream::named(ctx.seed(), "init/" + cfg.name);
    maybe_model.emplace(ctx.architecture(), init);
  } else {
    maybe_model.emplace(ctx.resolve(cfg.warm_start, cfg.name));
  }
  model::JointFlowMapModel& net = *maybe_model;

  std::optional<model::JointFlowMapModel> teacher;
  std::optional<model::DiagonalVelocity> teacher_field;
  if (cfg.needs_teacher()) {
    teacher.emplace(ctx.resolve(cfg.teacher, cfg.name));
    teacher_field.emplace(*teacher);
  }
  const model::DiagonalVelocity self_field(net);

  RngStream data_rng = RngStream::named(ctx.seed(), "data/" + cfg.name);
  RngStream probe_rng = RngStream::named(ctx.seed(), "probe/" + cfg.name);

  DivergenceSource div_src;
  if (cfg.trains_divergence()) {
    div_src.field = cfg.divergence_source == Supervision::kTeacher
                        ? static_cast<const VelocityField*>(&*teacher_field)
                        : static_cast<const VelocityField*>(&self_field);
    div_src.mode = cfg.trace;
    div_src.rng = &probe_rng;
  }
  const VelocityField* vm_teacher =
      cfg.velocity_target == Supervision::kTeacher ? static_cast<const VelocityField*>(&*teacher_field) : nullptr;

  std::vector<Tensor>& params = net.parameters();
  ad::AdamState adam = ad::AdamState::for_params(params, ad::AdamConfig{.lr = cfg.lr});
  std::optional<ad::Ema> ema;
  if (cfg.ema_rate > 0.0) ema.emplace(cfg.ema_rate, params);

  Matrix holdout;
  if (cfg.early_stopping.enabled) holdout = on_support_holdout(ctx.density(), ctx.seed(), cfg.early_stopping.holdout);
  std::optional<double> best;
  std::int64_t best_step = 0;
  Eigen::VectorXd best_params;

  const Eigen::Index n_fm =
      cfg.has_consistency() ? std::max<Eigen::Index>(1, std::lround(cfg.batch_size * cfg.fm_fraction))
                            : cfg.batch_size;
  const Eigen::Index n_sc = cfg.has_consistency() ? cfg.batch_size - n_fm : 0;
  const bool f2d2 = cfg.kind == StageKind::kShortcutF2D2;

  auto evaluate_params = [&]() -> model::JointFlowMapModel {
    model::JointFlowMapModel copy = net.clone();
    if (ema) copy.set_parameters(ema->shadow());
    return copy;
  };

  auto compute = [&]() -> StepOutcome {
    StepOutcome o;
    o.terms.lambda_div = cfg.lambda_div;
    if (cfg.kind == StageKind::kMeanFlowF2D2) {
      const auto batch = data::make_interpolant_batch(data_rng, ctx.density(), cfg.batch_size, cfg.pair_scheme,
                                                      cfg.reverse_fraction);
      const Tensor mf = loss_meanflow(net, batch);
      const Tensor mf_div = loss_meanflow_div(net, batch, div_src, cfg.trace, &probe_rng);
      o.terms.mf = mf.item();
      o.terms.mf_div = mf_div.item();
      o.total = mf + cfg.lambda_div * mf_div;
      return o;
    }
    const auto fm_batch =
        data::make_interpolant_batch(data_rng, ctx.density(), n_fm, data::TimeScheme::kUniformT);
    const InstantaneousLosses inst =
        instantaneous_losses(net, fm_batch, vm_teacher, f2d2 ? &div_src : nullptr);
    o.terms.vm = inst.vm.item();
    o.total = inst.vm;
    if (inst.div) {
      o.terms.div = inst.div->item();
      o.total = o.total + cfg.lambda_div * *inst.div;
    }
    if (n_sc > 0) {
      const auto sc_batch = data::make_interpolant_batch(data_rng, ctx.density(), n_sc, cfg.pair_scheme,
                                                         cfg.reverse_fraction);
      const ConsistencyLosses cons =
          consistency_losses(net, sc_batch, f2d2 && !cfg.lagrangian, f2d2 && cfg.lagrangian ? &div_src : nullptr);
      o.terms.u_sc = cons.u_sc.item();
      o.total = o.total + cons.u_sc;
      if (cons.d_sc) {
        o.terms.d_sc = cons.d_sc->item();
        o.total = o.total + cfg.lambda_div * *cons.d_sc;
      }
      if (cons.lag) {
        o.terms.lag = cons.lag->item();
        o.total = o.total + cfg.lambda_div * *cons.lag;
      }
    }
    return o;
  };

  const std::int64_t max_skipped = static_cast<std::int64_t>(std::floor(0.01 * static_cast<double>(cfg.steps)));
  std::int64_t skipped = 0;
  LossTerms interval_sum;
  double interval_grad_norm = 0.0;
  std::int64_t interval_count = 0;
  LossTerms last_interval;
  last_interval.lambda_div = cfg.lambda_div;

  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    const std::int64_t done = step + 1;
    adam.config.lr = cfg.decay_start > 0 ? ad::lr_schedule(step, cfg.lr, cfg.decay_start) : cfg.lr;
    bool ok = true;
    {
      ad::Tape tape;
      StepOutcome o = compute();
      if (!std::isfinite(o.total.item())) {
        ok = false;
      } else {
        const std::vector<Matrix> grads = ad::grad(o.total, params);
        double sq = 0.0;
        for (const auto& g : grads) sq += g.squaredNorm();
        try {
          ad::adam_step(params, grads, adam);
          if (ema) ema->update(params);
          interval_sum += o.terms;
          interval_grad_norm += std::sqrt(sq);
          ++interval_count;
        } catch (const ad::NonFiniteGradient&) {
          ok = false;
        }
      }
    }
    if (!ok) {
      ++skipped;
      if (skipped > max_skipped) {
        throw TrainingAbort(cfg.name, step, "non-finite loss or gradient on " + std::to_string(skipped) +
                                                " steps (more than 1% of " + std::to_string(cfg.steps) + ")");
      }
    }

    if (done % cfg.log_every == 0 || done == cfg.steps) {
      const double inv = interval_count > 0 ? 1.0 / static_cast<double>(interval_count) : 0.0;
      last_interval = interval_sum.scaled(inv);
      last_interval.lambda_div = cfg.lambda_div;
      const LossTerms& m = last_interval;
      ctx.metrics() << cfg.name << ',' << done << ',' << m.total() << ',' << m.vm << ',' << m.u_sc << ','
                    << m.div << ',' << m.d_sc << ',' << m.mf << ',' << m.mf_div << ',' << m.lag << ','
                    << adam.config.lr << ',' << interval_grad_norm * inv << ',' << skipped << '\n';
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      ctx.timing() << cfg.name << ',' << done << ',' << elapsed << '\n';
      interval_sum = LossTerms{};
      interval_grad_norm = 0.0;
      interval_count = 0;
    }

    const auto& es = cfg.early_stopping;
    if (es.enabled && (done % es.every == 0 || done == cfg.steps)) {
      const model::JointFlowMapModel snapshot = evaluate_params();
      double total = 0.0;
      const Eigen::VectorXd truth = ctx.density().logpdf(holdout);
      for (int k : es.ks) {
        const auto report = sampling::likelihood_fewstep(snapshot, holdout, k);
        const double err = (report.log_density - truth).cwiseAbs().mean();
        total += err;
        ctx.validation() << cfg.name << ',' << done << ',' << k << ',' << err << '\n';
      }
      const double mean_err = total / static_cast<double>(es.ks.size());
      ctx.validation() << cfg.name << ',' << done << ",mean," << mean_err << '\n';
      if (!best || mean_err < *best) {
        best = mean_err;
        best_step = done;
        best_params = snapshot.flat_parameters();
      }
    }
  }
  ctx.metrics().flush();
  ctx.timing().flush();
  if (cfg.early_stopping.enabled) ctx.validation().flush();

  if (best) {
    net.set_flat_parameters(best_params);
  } else if (ema) {
    net.set_parameters(ema->shadow());
  }
  if (cfg.trains_divergence() && cfg.steps > 0) net.set_divergence_trained(true);

  model::Checkpoint ckpt = model::Checkpoint::from_model(net, cfg.name, static_cast<std::uint64_t>(cfg.steps));
  ckpt.optimizer = adam;
  ckpt.streams = {{"data/" + cfg.name, data_rng.key(), data_rng.position()},
                  {"probe/" + cfg.name, probe_rng.key(), probe_rng.position()}};
  const fs::path ckpt_path = ctx.out_dir() / (cfg.name + ".ckpt");
  model::save_checkpoint(ckpt, ckpt_path);

  StageSummary summary;
  summary.name = cfg.name;
  summary.kind = to_string(cfg.kind);
  summary.steps_run = cfg.steps;
  summary.skipped = skipped;
  summary.final_terms = last_interval;
  summary.best_validation = best;
  summary.best_step = best_step;
  summary.checkpoint = ckpt_path.filename().string();
  {
    std::ofstream out(ctx.out_dir() / (cfg.name + ".summary.json"), std::ios::trunc);
    out << summary.to_json() << '\n';
  }
  ctx.store(cfg.name, std::move(net));
  return summary;
}

std::vector<StageSummary> run_plan(const StagePlan& plan, TrainingContext& ctx, std::ostream* log) {
  plan.validate();
  std::vector<StageSummary> out;
  nlohmann::json all = nlohmann::json::array();
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    const StageConfig& st = plan.stages[i];
    if (log != nullptr) {
      *log << "stage " << st.name << " (" << to_string(st.kind) << ", " << st.steps << " steps)\n" << std::flush;
    }
    out.push_back(run_stage(plan, i, ctx));
    if (log != nullptr) {
      const StageSummary& s = out.back();
      *log << "  done: loss " << s.final_terms.total();
      if (s.best_validation) *log << ", best validation " << *s.best_validation << " at step " << s.best_step;
      *log << ", checkpoint " << (ctx.out_dir() / s.checkpoint).string() << '\n' << std::flush;
    }
    all.push_back(nlohmann::json::parse(out.back().to_json()));
  }
  std::ofstream(ctx.out_dir() / "summary.json", std::ios::trunc) << all.dump(2) << '\n';
  return out;
}

}  // namespace f2d2::train
