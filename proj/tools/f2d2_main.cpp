// Command-line entry point: train, eval, guide and acceptance subcommands.
#include "f2d2/harness/acceptance.hpp"
#include "f2d2/harness/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace f2d2;

void add_common(CLI::App* cmd, harness::CommonOptions& opts, bool config_required) {
  auto* c = cmd->add_option("--config", opts.config, "YAML run configuration");
  if (config_required) c->required();
  cmd->add_option("--seed", opts.seed, "Override the config seed");
  cmd->add_option("--out", opts.out, "Override the output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint flow-map and log-density distillation"};
  app.require_subcommand(1);

  harness::CommonOptions train_opts;
  auto* train = app.add_subcommand("train", "Run the configured training stages");
  add_common(train, train_opts, true);

  harness::EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "Few-step likelihood evaluation of a checkpoint");
  add_common(eval, eval_opts, true);
  eval->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint to evaluate")->required();
  eval->add_option("--k", eval_opts.ks, "Step counts (default: the config's list)");

  harness::GuideOptions guide_opts;
  auto* guide = app.add_subcommand("guide", "Maximum-likelihood self-guided sampling");
  add_common(guide, guide_opts, true);
  guide->add_option("--checkpoint", guide_opts.checkpoint, "Checkpoint with a trained divergence head")
      ->required();
  guide->add_option("--guidance-steps", guide_opts.steps, "Adam steps on the initial noise");
  guide->add_option("--guidance-lr", guide_opts.lr, "Adam learning rate on the initial noise");

  std::vector<int> criteria{1, 2, 3, 4, 5, 6, 7, 8};
  std::filesystem::path acc_config, run_dir, rerun_dir;
  auto* acc = app.add_subcommand("acceptance", "Run acceptance criteria and print one line each");
  acc->add_option("--criterion", criteria, "Criteria to run (1-8)")->check(CLI::Range(1, 8));
  acc->add_option("--config", acc_config, "Config used to train the run (criteria 5-8)");
  acc->add_option("--run-dir", run_dir, "Trained run directory (criteria 5-8)");
  acc->add_option("--rerun-dir", rerun_dir, "Directory for the determinism retrain (criterion 8)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? harness::kExitOk : harness::kExitUsage;
  }

  if (*train) return harness::cmd_train(train_opts, std::cout, std::cerr);
  if (*eval) return harness::cmd_eval(eval_opts, std::cout, std::cerr);
  if (*guide) return harness::cmd_guide(guide_opts, std::cout, std::cerr);
  if (*acc) {
    for (int id : criteria) {
      if (id >= 5 && (acc_config.empty() || run_dir.empty())) {
        std::cerr << "criteria 5-8 need --config and --run-dir\n";
        return harness::kExitUsage;
      }
      if (id == 8 && rerun_dir.empty()) {
        std::cerr << "criterion 8 needs --rerun-dir\n";
        return harness::kExitUsage;
      }
    }
    return acceptance::run_criteria(criteria, acc_config, run_dir, rerun_dir, std::cout);
  }
  return harness::kExitUsage;
}
