#include "f2d2/harness/commands.hpp"
#include "f2d2/harness/config.hpp"
#include "f2d2/model/checkpoint.hpp"
#include "f2d2/train/stage.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace f2d2;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("f2d2_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const char* kTinyConfig = R"(seed: 3
density: {kind: checkerboard}
model: {hidden_width: 16, hidden_layers: 2, div_head_hidden: [8]}
stages:
  - {name: teacher, kind: flow_matching, steps: 30, batch_size: 32, log_every: 10}
  - name: f2d2
    kind: shortcut_f2d2
    steps: 20
    batch_size: 32
    warm_start: teacher
    teacher: teacher
    velocity_target: teacher
    log_every: 10
    early_stopping: {every: 10, holdout: 50, ks: [1, 2]}
eval: {ks: [1, 2], n_samples: 100, grid_resolution: 4, reference_steps: 8}
guidance: {steps: 2, n_samples: 16}
)";

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.yaml";
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("config errors carry the file and line") {
  const std::string bad = "seed: 1\nmodel: {hidden_width: 8}\nstages:\n  - {name: a, kind: flow_matching, colour: red}\n";
  try {
    harness::parse_config(bad, "bad.yaml");
    FAIL("expected ConfigError");
  } catch (const harness::ConfigError& e) {
    CHECK(e.line() == 4);
    CHECK(std::string(e.what()).find("bad.yaml:4") == 0);
    CHECK(std::string(e.what()).find("colour") != std::string::npos);
  }
  CHECK_THROWS_AS(harness::parse_config("stages: [{name: a, kind: teleport}]"), harness::ConfigError);
  CHECK_THROWS_AS(harness::parse_config("stages: [{name: a, steps: 1, lr: -1}]"), harness::ConfigError);
  CHECK_THROWS_AS(harness::parse_config("stages: [{name: a, warm_start: nowhere.ckpt}]"), harness::ConfigError);
  CHECK_THROWS_AS(harness::parse_config("stages: [{name: a}]\neval: {ks: [0]}"), harness::ConfigError);
  CHECK_THROWS_AS(harness::parse_config("seed: [1, 2\n"), harness::ConfigError);
}

TEST_CASE("config defaults and stage lookup") {
  const auto cfg = harness::parse_config(kTinyConfig);
  CHECK(cfg.seed == 3);
  CHECK(cfg.architecture.hidden_width == 16);
  REQUIRE(cfg.plan.stages.size() == 2);
  CHECK(harness::final_stage(cfg).name == "f2d2");
  CHECK(harness::teacher_stage(cfg)->name == "teacher");
  CHECK(cfg.plan.stages[1].early_stopping.enabled);
  CHECK(cfg.plan.stages[1].divergence_source == train::Supervision::kTeacher);
  CHECK(cfg.guidance.steps == 2);
  CHECK_FALSE(cfg.guidance.lr.has_value());
}

TEST_CASE("training is deterministic and writes every artifact") {
  const fs::path dir = scratch("train");
  const fs::path cfg_path = write_config(dir, kTinyConfig);
  std::ostringstream log, err;
  harness::CommonOptions a{cfg_path, std::nullopt, dir / "a"};
  harness::CommonOptions b{cfg_path, std::nullopt, dir / "b"};
  REQUIRE(harness::cmd_train(a, log, err) == harness::kExitOk);
  REQUIRE(harness::cmd_train(b, log, err) == harness::kExitOk);
  for (const char* f : {"metrics.csv", "validation.csv", "timing.csv", "summary.json", "teacher.ckpt", "f2d2.ckpt",
                        "f2d2.summary.json"}) {
    CHECK_MESSAGE(fs::exists(dir / "a" / f), f);
  }
  CHECK(read_file(dir / "a" / "metrics.csv") == read_file(dir / "b" / "metrics.csv"));
  CHECK(read_file(dir / "a" / "validation.csv") == read_file(dir / "b" / "validation.csv"));
  CHECK(read_file(dir / "a" / "metrics.csv").rfind("stage,step,total,vm,u_sc,div,d_sc,mf,mf_div,lag,lr,grad_norm,skipped", 0) == 0);
  const auto ckpt = model::load_checkpoint(dir / "a" / "f2d2.ckpt");
  CHECK(ckpt.divergence_trained);
  CHECK(ckpt.optimizer.has_value());

  harness::CommonOptions c{cfg_path, 4, dir / "c"};
  REQUIRE(harness::cmd_train(c, log, err) == harness::kExitOk);
  CHECK(read_file(dir / "a" / "metrics.csv") != read_file(dir / "c" / "metrics.csv"));

  SUBCASE("eval and guide read the checkpoint") {
    harness::EvalOptions e;
    e.config = cfg_path;
    e.out = dir / "eval";
    e.checkpoint = dir / "a" / "f2d2.ckpt";
    REQUIRE(harness::cmd_eval(e, log, err) == harness::kExitOk);
    CHECK(fs::exists(dir / "eval" / "calibration_K1.json"));
    CHECK(fs::exists(dir / "eval" / "grid_K2.csv"));
    CHECK(fs::exists(dir / "eval" / "likelihood_K2.jsonl"));

    harness::GuideOptions g;
    g.config = cfg_path;
    g.out = dir / "guide";
    g.checkpoint = dir / "a" / "f2d2.ckpt";
    REQUIRE(harness::cmd_guide(g, log, err) == harness::kExitOk);
    CHECK(fs::exists(dir / "guide" / "guided.csv"));
    CHECK(fs::exists(dir / "guide" / "guidance_trace.csv"));

    // The teacher never trained its divergence head.
    g.checkpoint = dir / "a" / "teacher.ckpt";
    CHECK(harness::cmd_guide(g, log, err) == harness::kExitUsage);
  }
}

TEST_CASE("command exit codes for bad inputs") {
  const fs::path dir = scratch("exit");
  std::ostringstream log, err;
  harness::CommonOptions missing{dir / "missing.yaml", std::nullopt, std::nullopt};
  CHECK(harness::cmd_train(missing, log, err) == harness::kExitUsage);

  const fs::path cfg_path = write_config(dir, kTinyConfig);
  harness::EvalOptions e;
  e.config = cfg_path;
  e.out = dir / "eval";
  e.checkpoint = dir / "nope.ckpt";
  CHECK(harness::cmd_eval(e, log, err) == harness::kExitUsage);

  std::ofstream(dir / "garbage.ckpt") << "garbage";
  e.checkpoint = dir / "garbage.ckpt";
  CHECK(harness::cmd_eval(e, log, err) == harness::kExitUsage);

  // A checkpoint whose architecture differs from the config's.
  model::Architecture other;
  other.hidden_width = 12;
  other.hidden_layers = 1;
  RngStream rng(1);
  model::save_checkpoint(model::Checkpoint::from_model(model::JointFlowMapModel(other, rng), "x", 0), dir / "other.ckpt");
  e.checkpoint = dir / "other.ckpt";
  CHECK(harness::cmd_eval(e, log, err) == harness::kExitUsage);
  CHECK(err.str().find("architecture") != std::string::npos);
}
