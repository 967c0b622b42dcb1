#include "f2d2/harness/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace f2d2::harness {

namespace fs = std::filesystem;

ConfigError::ConfigError(const std::string& file, int line, const std::string& msg)
    : std::runtime_error(line > 0 ? file + ":" + std::to_string(line) + ": " + msg : file + ": " + msg),
      line_(line) {}

namespace {

class Parser {
 public:
  explicit Parser(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& msg) const {
    const int line = node.IsDefined() && node.Mark().line >= 0 ? node.Mark().line + 1 : 0;
    throw ConfigError(source_, line, msg);
  }

  void expect_map(const YAML::Node& node, const std::string& what) const {
    if (!node.IsMap()) fail(node, what + " must be a mapping");
  }

  void allow_keys(const YAML::Node& node, std::initializer_list<const char*> keys, const std::string& where) const {
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(kv.first, "unknown key '" + key + "' in " + where);
    }
  }

  template <typename T>
  void read(const YAML::Node& parent, const char* key, T& out) const {
    const YAML::Node node = parent[key];
    if (!node.IsDefined() || node.IsNull()) return;
    try {
      out = node.as<T>();
    } catch (const YAML::Exception&) {
      fail(node, std::string("invalid value for '") + key + "'");
    }
  }

  train::TraceMode trace(const YAML::Node& node) const {
    if (node.IsScalar()) {
      const auto s = node.as<std::string>();
      if (s == "exact") return train::TraceMode::exact();
      if (s == "hutchinson") return train::TraceMode::hutchinson(1);
      fail(node, "trace must be 'exact', 'hutchinson' or a mapping");
    }
    expect_map(node, "trace");
    allow_keys(node, {"kind", "probes", "probe"}, "trace");
    std::string kind = "exact", probe = "rademacher";
    int probes = 1;
    read(node, "kind", kind);
    read(node, "probes", probes);
    read(node, "probe", probe);
    if (probes < 1) fail(node["probes"], "probes must be at least 1");
    ad::ProbeKind pk;
    if (probe == "rademacher") {
      pk = ad::ProbeKind::kRademacher;
    } else if (probe == "gaussian") {
      pk = ad::ProbeKind::kGaussian;
    } else {
      fail(node["probe"], "probe must be 'rademacher' or 'gaussian'");
    }
    if (kind == "exact") return train::TraceMode::exact();
    if (kind == "hutchinson") return train::TraceMode::hutchinson(probes, pk);
    fail(node["kind"], "trace kind must be 'exact' or 'hutchinson'");
  }

  data::Density density(const YAML::Node& node) const {
    expect_map(node, "density");
    allow_keys(node, {"kind", "dim", "weights", "means", "stddevs"}, "density");
    std::string kind = "checkerboard";
    read(node, "kind", kind);
    if (kind == "checkerboard") return data::Density::checkerboard();
    if (kind == "standard_gaussian") {
      int dim = 2;
      read(node, "dim", dim);
      if (dim < 1) fail(node["dim"], "dim must be positive");
      return data::Density::standard_gaussian(dim);
    }
    if (kind == "gaussian_mixture") {
      std::vector<double> weights;
      std::vector<std::vector<double>> means, stddevs;
      read(node, "weights", weights);
      read(node, "means", means);
      read(node, "stddevs", stddevs);
      if (weights.empty() || means.size() != weights.size() || stddevs.size() != weights.size()) {
        fail(node, "gaussian_mixture needs equally long weights, means and stddevs");
      }
      data::GaussianMixture gm;
      gm.weights = weights;
      for (std::size_t i = 0; i < means.size(); ++i) {
        if (means[i].size() != means[0].size() || stddevs[i].size() != means[0].size()) {
          fail(node, "mixture components must share one dimension");
        }
        gm.means.push_back(Eigen::Map<const Eigen::VectorXd>(means[i].data(), static_cast<Eigen::Index>(means[i].size())));
        gm.stddevs.push_back(
            Eigen::Map<const Eigen::VectorXd>(stddevs[i].data(), static_cast<Eigen::Index>(stddevs[i].size())));
      }
      try {
        return data::Density(gm);
      } catch (const std::exception& e) {
        fail(node, e.what());
      }
    }
    fail(node["kind"], "unknown density kind '" + kind + "'");
  }

  model::Architecture architecture(const YAML::Node& node, int data_dim) const {
    model::Architecture a;
    a.data_dim = data_dim;
    if (!node.IsDefined()) return a;
    expect_map(node, "model");
    allow_keys(node,
               {"hidden_width", "hidden_layers", "activation", "div_head_hidden", "time_embedding",
                "embedding_frequencies", "div_scale", "zero_init_heads"},
               "model");
    read(node, "hidden_width", a.hidden_width);
    read(node, "hidden_layers", a.hidden_layers);
    read(node, "div_head_hidden", a.div_head_hidden);
    read(node, "embedding_frequencies", a.embedding_frequencies);
    read(node, "div_scale", a.div_scale);
    read(node, "zero_init_heads", a.zero_init_heads);
    std::string act = model::to_string(a.activation), emb = model::to_string(a.time_embedding);
    read(node, "activation", act);
    read(node, "time_embedding", emb);
    try {
      a.activation = model::parse_activation(act);
    } catch (const std::exception& e) {
      fail(node["activation"], e.what());
    }
    try {
      a.time_embedding = model::parse_time_embedding(emb);
    } catch (const std::exception& e) {
      fail(node["time_embedding"], e.what());
    }
    if (a.hidden_width < 1) fail(node["hidden_width"], "hidden_width must be positive");
    if (a.hidden_layers < 1) fail(node["hidden_layers"], "hidden_layers must be positive");
    if (!(a.div_scale > 0.0)) fail(node["div_scale"], "div_scale must be positive");
    for (int h : a.div_head_hidden) {
      if (h < 1) fail(node["div_head_hidden"], "div_head_hidden widths must be positive");
    }
    if (a.embedding_frequencies < 1) fail(node["embedding_frequencies"], "embedding_frequencies must be positive");
    return a;
  }

  train::StageConfig stage(const YAML::Node& node) const {
    expect_map(node, "each stage");
    allow_keys(node,
               {"name", "kind", "steps", "batch_size", "fm_fraction", "lr", "decay_start", "lambda_div",
                "velocity_target", "divergence_source", "trace", "lagrangian", "pair_scheme",
                "reverse_fraction", "warm_start", "teacher", "early_stopping", "ema_rate", "log_every"},
               "stage");
    train::StageConfig s;
    read(node, "name", s.name);
    if (s.name.empty()) fail(node, "stage needs a name");
    std::string kind = "flow_matching";
    read(node, "kind", kind);
    try {
      s.kind = train::parse_stage_kind(kind);
    } catch (const std::exception& e) {
      fail(node["kind"], e.what());
    }
    read(node, "steps", s.steps);
    read(node, "batch_size", s.batch_size);
    read(node, "fm_fraction", s.fm_fraction);
    read(node, "lr", s.lr);
    read(node, "decay_start", s.decay_start);
    read(node, "lambda_div", s.lambda_div);
    read(node, "lagrangian", s.lagrangian);
    read(node, "reverse_fraction", s.reverse_fraction);
    read(node, "warm_start", s.warm_start);
    read(node, "teacher", s.teacher);
    read(node, "ema_rate", s.ema_rate);
    read(node, "log_every", s.log_every);
    for (auto [key, field] : {std::pair{"velocity_target", &s.velocity_target},
                              std::pair{"divergence_source", &s.divergence_source}}) {
      std::string v = train::to_string(*field);
      read(node, key, v);
      try {
        *field = train::parse_supervision(v);
      } catch (const std::exception& e) {
        fail(node[key], e.what());
      }
    }
    if (node["trace"].IsDefined()) s.trace = trace(node["trace"]);
    if (node["pair_scheme"].IsDefined()) {
      const auto v = node["pair_scheme"].as<std::string>();
      if (v == "discrete_grid") {
        s.pair_scheme = data::TimeScheme::kDiscreteGrid;
      } else if (v == "uniform_pairs") {
        s.pair_scheme = data::TimeScheme::kUniformPairs;
      } else {
        fail(node["pair_scheme"], "pair_scheme must be 'discrete_grid' or 'uniform_pairs'");
      }
    } else if (s.kind == train::StageKind::kMeanFlowF2D2) {
      s.pair_scheme = data::TimeScheme::kUniformPairs;
    }
    if (const YAML::Node es = node["early_stopping"]; es.IsDefined()) {
      expect_map(es, "early_stopping");
      allow_keys(es, {"enabled", "every", "ks", "holdout"}, "early_stopping");
      s.early_stopping.enabled = true;
      read(es, "enabled", s.early_stopping.enabled);
      read(es, "every", s.early_stopping.every);
      read(es, "ks", s.early_stopping.ks);
      read(es, "holdout", s.early_stopping.holdout);
    }
    return s;
  }

  RunConfig run(const YAML::Node& root, const fs::path& base_dir) const {
    if (!root.IsMap()) throw ConfigError(source_, 0, "top level must be a mapping");
    allow_keys(root, {"seed", "out", "density", "model", "stages", "eval", "guidance"}, "config");
    RunConfig cfg;
    read(root, "seed", cfg.seed);
    std::string out = cfg.out_dir.string();
    read(root, "out", out);
    cfg.out_dir = out;
    if (root["density"].IsDefined()) cfg.density = density(root["density"]);
    cfg.architecture = architecture(root["model"], cfg.density.dim());

    const YAML::Node stages = root["stages"];
    if (!stages.IsDefined() || !stages.IsSequence()) fail(root, "'stages' must be a list");
    std::set<std::string> earlier;
    for (const auto& node : stages) {
      train::StageConfig s = stage(node);
      for (auto [key, ref] : {std::pair{"warm_start", &s.warm_start}, std::pair{"teacher", &s.teacher}}) {
        if (ref->empty() || earlier.count(*ref)) continue;
        fs::path p(*ref);
        if (p.is_relative() && !fs::exists(p)) p = base_dir / p;
        if (!fs::exists(p)) fail(node[key], std::string(key) + " '" + *ref + "' is not an earlier stage and the path does not exist");
        *ref = p.string();
      }
      earlier.insert(s.name);
      cfg.plan.stages.push_back(std::move(s));
    }
    try {
      cfg.plan.validate();
    } catch (const std::invalid_argument& e) {
      fail(stages, e.what());
    }

    if (const YAML::Node ev = root["eval"]; ev.IsDefined()) {
      expect_map(ev, "eval");
      allow_keys(ev, {"ks", "n_samples", "grid_resolution", "reference_steps", "reference_trace"}, "eval");
      read(ev, "ks", cfg.eval.ks);
      read(ev, "n_samples", cfg.eval.n_samples);
      read(ev, "grid_resolution", cfg.eval.grid_resolution);
      read(ev, "reference_steps", cfg.eval.reference_steps);
      if (ev["reference_trace"].IsDefined()) cfg.eval.reference_trace = trace(ev["reference_trace"]);
      if (cfg.eval.ks.empty()) fail(ev, "eval.ks must not be empty");
      for (int k : cfg.eval.ks) {
        if (k < 1) fail(ev["ks"], "every K must be at least 1");
      }
      if (cfg.eval.n_samples < 1) fail(ev["n_samples"], "n_samples must be positive");
      if (cfg.eval.grid_resolution < 2) fail(ev["grid_resolution"], "grid_resolution must be at least 2");
      if (cfg.eval.reference_steps < 1) fail(ev["reference_steps"], "reference_steps must be positive");
    }
    if (const YAML::Node g = root["guidance"]; g.IsDefined()) {
      expect_map(g, "guidance");
      allow_keys(g, {"steps", "lr", "k_samp", "n_samples"}, "guidance");
      read(g, "steps", cfg.guidance.steps);
      double lr = 0.0;
      if (g["lr"].IsDefined() && !g["lr"].IsNull()) {
        read(g, "lr", lr);
        if (!(lr > 0.0)) fail(g["lr"], "guidance lr must be positive");
        cfg.guidance.lr = lr;
      }
      read(g, "k_samp", cfg.guidance.k_samp);
      read(g, "n_samples", cfg.guidance.n_samples);
      if (cfg.guidance.steps < 0) fail(g["steps"], "guidance steps must be non-negative");
      if (cfg.guidance.k_samp < 1) fail(g["k_samp"], "k_samp must be at least 1");
      if (cfg.guidance.n_samples < 1) fail(g["n_samples"], "n_samples must be positive");
    }
    return cfg;
  }

 private:
  std::string source_;
};

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source_name) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source_name, e.mark.line + 1, e.msg);
  }
  return Parser(source_name).run(root, fs::current_path());
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), 0, "cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  YAML::Node root;
  try {
    root = YAML::Load(buf.str());
  } catch (const YAML::ParserException& e) {
    throw ConfigError(path.string(), e.mark.line + 1, e.msg);
  }
  return Parser(path.string()).run(root, path.parent_path());
}

const train::StageConfig& final_stage(const RunConfig& cfg) {
  if (cfg.plan.stages.empty()) throw ConfigError("<config>", 0, "plan has no stages");
  for (auto it = cfg.plan.stages.rbegin(); it != cfg.plan.stages.rend(); ++it) {
    if (it->trains_divergence()) return *it;
  }
  return cfg.plan.stages.back();
}

const train::StageConfig* teacher_stage(const RunConfig& cfg) {
  for (const auto& s : cfg.plan.stages) {
    if (s.kind == train::StageKind::kFlowMatching) return &s;
  }
  return nullptr;
}

}  // namespace f2d2::harness
