#include "f2d2/harness/commands.hpp"

#include "f2d2/eval/metrics.hpp"
#include "f2d2/model/checkpoint.hpp"
#include "f2d2/sampling/guidance.hpp"
#include "f2d2/sampling/likelihood.hpp"

#include <fstream>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <iomanip>

namespace f2d2::harness {

namespace fs = std::filesystem;
using Matrix = Eigen::MatrixXd;

void retain_freed_memory() {
#if defined(__GLIBC__)
  // Activations are around a megabyte each. With the default thresholds glibc
  // serves them with mmap and returns them on free, so every training step
  // pays for fresh zeroed pages. Keeping them on the heap roughly halves the
  // backward pass time.
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

RunConfig resolve_config(const CommonOptions& opts) {
  RunConfig cfg = load_config(opts.config);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.out) cfg.out_dir = *opts.out;
  return cfg;
}

namespace {

// Loads a checkpoint and checks it against the configured architecture.
model::JointFlowMapModel load_matching(const RunConfig& cfg, const fs::path& path) {
  if (!fs::exists(path)) throw model::CheckpointError("checkpoint '" + path.string() + "' does not exist");
  const model::Checkpoint ckpt = model::load_checkpoint(path);
  if (!(ckpt.architecture == cfg.architecture)) {
    throw train::ReferenceError("checkpoint '" + path.string() +
                                "' does not match the architecture declared in the config");
  }
  return ckpt.to_model();
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << std::setprecision(17);
  return out;
}

void write_points(const fs::path& path, const Matrix& pts) {
  std::ofstream out = open_out(path);
  for (Eigen::Index j = 0; j < pts.cols(); ++j) out << (j ? "," : "") << "x" << j;
  out << '\n';
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    for (Eigen::Index j = 0; j < pts.cols(); ++j) out << (j ? "," : "") << pts(i, j);
    out << '\n';
  }
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  retain_freed_memory();
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const model::CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
  } catch (const train::ReferenceError& e) {
    err << "error: " << e.what() << '\n';
  } catch (const train::TrainingAbort& e) {
    err << "training aborted: " << e.what() << '\n';
    return kExitTrainingAbort;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace

int cmd_train(const CommonOptions& opts, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts);
    train::TrainingContext ctx(cfg.seed, cfg.density, cfg.architecture, cfg.out_dir);
    train::run_plan(cfg.plan, ctx, &log);
    return kExitOk;
  });
}

int cmd_eval(const EvalOptions& opts, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts);
    const model::JointFlowMapModel net = load_matching(cfg, opts.checkpoint);
    const std::vector<int> ks = opts.ks.empty() ? cfg.eval.ks : opts.ks;
    for (int k : ks) {
      if (k < 1) throw ConfigError("--k", 0, "every K must be at least 1");
    }
    fs::create_directories(cfg.out_dir);
    RngStream rng = RngStream::named(cfg.seed, "eval");
    const Matrix points = cfg.density.sample(rng, cfg.eval.n_samples);
    for (int k : ks) {
      const auto report = sampling::likelihood_fewstep(net, points, k);
      const auto est = [&](const Matrix&) { return eval::Estimate{report.log_density, report.nfe}; };
      const eval::CalibrationSummary summary = eval::nll_calibration(est, cfg.density, points);
      const std::string tag = "K" + std::to_string(k);
      open_out(cfg.out_dir / ("calibration_" + tag + ".json")) << summary.to_json() << '\n';
      {
        std::ofstream out = open_out(cfg.out_dir / ("likelihood_" + tag + ".jsonl"));
        report.write_json_lines(out);
      }
      if (cfg.density.dim() == 2) {
        const Matrix grid = eval::density_grid(eval::fewstep_estimator(net, k), eval::Bounds{}, cfg.eval.grid_resolution);
        std::ofstream out = open_out(cfg.out_dir / ("grid_" + tag + ".csv"));
        eval::write_grid_csv(grid, out);
      }
      log << "K=" << k << ": mean NLL " << summary.mean_nll << ", mean |error| vs analytic "
          << summary.mean_abs_error_vs_analytic << " nats\n";
    }
    return kExitOk;
  });
}

int cmd_guide(const GuideOptions& opts, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(opts);
    const model::JointFlowMapModel net = load_matching(cfg, opts.checkpoint);
    if (!net.divergence_trained()) {
      throw train::ReferenceError("checkpoint '" + opts.checkpoint.string() +
                                  "' has no trained divergence head; guidance needs one");
    }
    sampling::GuidanceConfig g;
    g.steps = opts.steps.value_or(cfg.guidance.steps);
    g.lr = opts.lr ? opts.lr : cfg.guidance.lr;
    g.k_samp = cfg.guidance.k_samp;
    if (g.steps < 0) throw ConfigError("--guidance-steps", 0, "must be non-negative");
    if (!(g.effective_lr() > 0.0)) throw ConfigError("--guidance-lr", 0, "must be positive");
    fs::create_directories(cfg.out_dir);

    RngStream unguided_rng = RngStream::named(cfg.seed, "guide");
    RngStream guided_rng = unguided_rng;
    const Matrix plain = sampling::sample(net, unguided_rng, cfg.guidance.n_samples, g.k_samp);
    const sampling::GuidedSamples guided = sampling::self_guided_sample(net, guided_rng, cfg.guidance.n_samples, g);
    write_points(cfg.out_dir / "unguided.csv", plain);
    write_points(cfg.out_dir / "guided.csv", guided.samples);
    {
      std::ofstream out = open_out(cfg.out_dir / "guidance_trace.csv");
      out << "sample";
      for (Eigen::Index j = 0; j < guided.surrogate_trace.cols(); ++j) out << ",nll_" << j;
      out << '\n';
      for (Eigen::Index i = 0; i < guided.surrogate_trace.rows(); ++i) {
        out << i;
        for (Eigen::Index j = 0; j < guided.surrogate_trace.cols(); ++j) out << ',' << guided.surrogate_trace(i, j);
        out << '\n';
      }
    }
    const auto& tr = guided.surrogate_trace;
    log << "guidance: " << g.steps << " step(s), lr " << g.effective_lr() << ", mean surrogate NLL "
        << tr.col(0).mean() << " -> " << tr.col(tr.cols() - 1).mean() << '\n';
    return kExitOk;
  });
}

}  // namespace f2d2::harness
