#pragma once

#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "reat/attacks.hpp"
#include "reat/datasets.hpp"
#include "reat/models.hpp"
#include "reat/trainer.hpp"

namespace reat {

using nlohmann::json;

// Run configuration. Parsed from a single JSON document, schema-validated
// (unknown keys rejected), command-line overrides applied before
// validation, and the resolved document echoed next to the run's outputs.

struct SourceConfig {
  std::string kind;  // synthetic | idx | cifar-binary
  SyntheticSpec synthetic;
  size_t synthetic_test_n = 0;
  uint64_t synthetic_test_seed = 0;
  std::vector<std::string> train_files, test_files;  // idx: {images, labels}
};

struct RunConfig {
  SourceConfig source;
  bool longtail_enabled = false;
  LongTailSpec longtail;
  ModelSpec model;  // input_shape filled from data at run time
  TrainConfig train;
  std::vector<AttackConfig> eval_attacks;
  bool export_features = false;
  std::string bound_mode = "normalized";
  std::string output_dir = "run";
  json resolved;  // the effective document, overrides applied
};

namespace cfgdetail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + where + "." + it.key() + "'");
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: bad value for '" + key + "'");
  }
}

inline AttackConfig parse_attack(const json& j, const std::string& where) {
  reject_unknown(j,
                 {"name", "norm", "epsilon", "alpha", "steps", "objective", "step_rule",
                  "logit_scale", "random_start", "seed", "weight_by_predicted"},
                 where);
  AttackConfig a;
  a.name = get_or<std::string>(j, "name", "pgd");
  a.norm = norm_from(get_or<std::string>(j, "norm", "linf"));
  a.epsilon = get_or<double>(j, "epsilon", a.epsilon);
  a.alpha = get_or<double>(j, "alpha", a.alpha);
  a.steps = get_or<int>(j, "steps", a.steps);
  a.objective = attack_objective_from(get_or<std::string>(j, "objective", "ce"));
  a.step_rule = step_rule_from(get_or<std::string>(j, "step_rule", "sign"));
  a.logit_scale = get_or<double>(j, "logit_scale", 1.0);
  a.random_start = get_or<bool>(j, "random_start", true);
  a.seed = get_or<uint64_t>(j, "seed", 0);
  a.weight_by_predicted = get_or<bool>(j, "weight_by_predicted", false);
  try {
    a.validate();
  } catch (const std::exception& e) {
    throw std::invalid_argument("config: " + where + ": " + e.what());
  }
  return a;
}

inline json parse_scalar(const std::string& text) {
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) return json(text);  // bare string
  return v;
}

}  // namespace cfgdetail

// `key.path=value` overrides, applied onto the raw document.
inline void apply_override(json& doc, const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override '" + spec + "' is not key.path=value");
  std::string path = spec.substr(0, eq);
  json value = cfgdetail::parse_scalar(spec.substr(eq + 1));
  json* cur = &doc;
  std::vector<std::string> parts = split(path, '.');
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!cur->contains(parts[i])) (*cur)[parts[i]] = json::object();
    cur = &(*cur)[parts[i]];
  }
  (*cur)[parts.back()] = value;
}

inline RunConfig parse_run_config(json doc) {
  RunConfig cfg;
  cfg.resolved = doc;
  cfgdetail::reject_unknown(
      doc, {"dataset", "model", "train", "eval", "output_dir"}, "(root)");

  const json& ds = doc.at("dataset");
  cfgdetail::reject_unknown(ds, {"source", "longtail"}, "dataset");
  const json& src = ds.at("source");
  cfgdetail::reject_unknown(src,
                            {"kind", "classes", "dim", "separation", "n_per_class", "seed",
                             "test_n_per_class", "test_seed", "train_files", "test_files"},
                            "dataset.source");
  cfg.source.kind = src.at("kind").get<std::string>();
  if (cfg.source.kind == "synthetic") {
    SyntheticSpec& s = cfg.source.synthetic;
    s.classes = cfgdetail::get_or<size_t>(src, "classes", s.classes);
    s.dim = cfgdetail::get_or<size_t>(src, "dim", s.dim);
    s.separation = cfgdetail::get_or<double>(src, "separation", s.separation);
    s.n_per_class = cfgdetail::get_or<size_t>(src, "n_per_class", s.n_per_class);
    s.seed = cfgdetail::get_or<uint64_t>(src, "seed", s.seed);
    cfg.source.synthetic_test_n = cfgdetail::get_or<size_t>(src, "test_n_per_class", 200);
    cfg.source.synthetic_test_seed = cfgdetail::get_or<uint64_t>(src, "test_seed", s.seed + 1);
  } else if (cfg.source.kind == "idx" || cfg.source.kind == "cifar-binary") {
    cfg.source.train_files = src.at("train_files").get<std::vector<std::string>>();
    cfg.source.test_files = src.at("test_files").get<std::vector<std::string>>();
  } else {
    throw std::invalid_argument("config: dataset.source.kind must be synthetic, idx, or cifar-binary");
  }

  if (ds.contains("longtail") && !ds.at("longtail").is_null()) {
    const json& lt = ds.at("longtail");
    cfgdetail::reject_unknown(lt, {"ur", "profile", "head_count", "seed"}, "dataset.longtail");
    cfg.longtail_enabled = true;
    cfg.longtail.ur = cfgdetail::get_or<double>(lt, "ur", 1.0);
    cfg.longtail.profile = tail_profile_from(cfgdetail::get_or<std::string>(lt, "profile", "exponential"));
    cfg.longtail.head_count = lt.at("head_count").get<size_t>();
    cfg.longtail.seed = cfgdetail::get_or<uint64_t>(lt, "seed", 1);
    if (cfg.longtail.ur < 1.0)
      throw std::invalid_argument("config: dataset.longtail.ur must be >= 1");
  }

  const json& mj = doc.at("model");
  cfgdetail::reject_unknown(mj, {"arch", "widths", "feature_dim", "head", "tau", "init_seed"},
                            "model");
  cfg.model.arch = arch_from(cfgdetail::get_or<std::string>(mj, "arch", "mlp"));
  cfg.model.widths = cfgdetail::get_or<std::vector<size_t>>(mj, "widths", {64, 64});
  cfg.model.feature_dim = cfgdetail::get_or<size_t>(mj, "feature_dim", 32);
  cfg.model.head = head_from(cfgdetail::get_or<std::string>(mj, "head", "linear"));
  cfg.model.tau = cfgdetail::get_or<double>(mj, "tau", 16.0);
  cfg.model.init_seed = cfgdetail::get_or<uint64_t>(mj, "init_seed", 1);

  const json& tj = doc.at("train");
  cfgdetail::reject_unknown(tj,
                            {"method", "lt_loss", "epochs", "batch_size", "lr0", "decay_points",
                             "decay_factor", "weight_decay", "momentum", "lambda_tail", "attack",
                             "seed", "augment", "log_ae_distances", "probe_samples", "probe_steps"},
                            "train");
  TrainConfig& t = cfg.train;
  t.method = method_from(cfgdetail::get_or<std::string>(tj, "method", "pgd-at"));
  t.lt_loss = lt_loss_from(cfgdetail::get_or<std::string>(tj, "lt_loss", "bsl"));
  t.epochs = cfgdetail::get_or<size_t>(tj, "epochs", 30);
  t.batch_size = cfgdetail::get_or<size_t>(tj, "batch_size", 64);
  t.lr0 = cfgdetail::get_or<double>(tj, "lr0", 0.1);
  t.decay_points = cfgdetail::get_or<std::vector<double>>(tj, "decay_points", {0.75, 0.9375});
  t.decay_factor = cfgdetail::get_or<double>(tj, "decay_factor", 0.1);
  t.weight_decay = cfgdetail::get_or<double>(tj, "weight_decay", 5e-4);
  t.momentum = cfgdetail::get_or<double>(tj, "momentum", 0.9);
  t.lambda_tail = cfgdetail::get_or<double>(tj, "lambda_tail", 1.0);
  t.seed = cfgdetail::get_or<uint64_t>(tj, "seed", 1);
  t.augment = cfgdetail::get_or<bool>(tj, "augment", false);
  t.log_ae_distances = cfgdetail::get_or<bool>(tj, "log_ae_distances", false);
  t.probe_samples = cfgdetail::get_or<size_t>(tj, "probe_samples", 500);
  t.probe_steps = cfgdetail::get_or<int>(tj, "probe_steps", 10);
  if (tj.contains("attack")) {
    t.gen_attack = cfgdetail::parse_attack(tj.at("attack"), "train.attack");
  } else {
    t.gen_attack.name = "gen";
  }
  if (!tj.contains("attack") || !tj.at("attack").contains("objective"))
    t.gen_attack.objective =
        t.method == Method::reat ? AttackObjective::rbl : AttackObjective::ce;
  if (!tj.contains("attack") || !tj.at("attack").contains("step_rule"))
    t.gen_attack.step_rule =
        t.method == Method::reat ? StepRule::weighted_sign : StepRule::sign;
  if (!tj.contains("attack") || !tj.at("attack").contains("random_start"))
    t.gen_attack.random_start = false;  // training generation default
  t.validate();

  if (doc.contains("eval")) {
    const json& ej = doc.at("eval");
    cfgdetail::reject_unknown(ej, {"attacks", "export_features", "bound_mode"}, "eval");
    if (ej.contains("attacks")) {
      size_t i = 0;
      for (const json& aj : ej.at("attacks"))
        cfg.eval_attacks.push_back(
            cfgdetail::parse_attack(aj, "eval.attacks[" + std::to_string(i++) + "]"));
    }
    cfg.export_features = cfgdetail::get_or<bool>(ej, "export_features", false);
    cfg.bound_mode = cfgdetail::get_or<std::string>(ej, "bound_mode", "normalized");
    if (cfg.bound_mode != "normalized" && cfg.bound_mode != "raw")
      throw std::invalid_argument("config: eval.bound_mode must be normalized or raw");
  }

  cfg.output_dir = cfgdetail::get_or<std::string>(doc, "output_dir", "run");
  const char* root = std::getenv("REAT_OUTPUT_ROOT");
  if (root && *root && !cfg.output_dir.empty() && cfg.output_dir[0] != '/')
    cfg.output_dir = std::string(root) + "/" + cfg.output_dir;
  return cfg;
}

inline RunConfig load_run_config(const std::string& path,
                                 const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("config: " + path + " is not valid JSON: " + e.what());
  }
  for (const std::string& ov : overrides) apply_override(doc, ov);
  RunConfig cfg = parse_run_config(doc);
  cfg.resolved = doc;
  return cfg;
}

// Materializes train/test datasets (and the long-tail subset when enabled).
struct PreparedData {
  LabeledDataset train;
  LabeledDataset test;
  ClassCounts counts;
};

inline PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData out;
  if (cfg.source.kind == "synthetic") {
    out.train = load_synthetic_gaussians(cfg.source.synthetic);
    SyntheticSpec test_spec = cfg.source.synthetic;
    test_spec.n_per_class = cfg.source.synthetic_test_n;
    test_spec.seed = cfg.source.synthetic_test_seed;
    out.test = load_synthetic_gaussians(test_spec);
  } else if (cfg.source.kind == "idx") {
    if (cfg.source.train_files.size() != 2 || cfg.source.test_files.size() != 2)
      throw std::invalid_argument("config: idx source needs {images, labels} file pairs");
    out.train = load_idx(cfg.source.train_files[0], cfg.source.train_files[1]);
    out.test = load_idx(cfg.source.test_files[0], cfg.source.test_files[1]);
  } else {
    out.train = load_cifar_binary(cfg.source.train_files);
    out.test = load_cifar_binary(cfg.source.test_files);
  }
  if (cfg.longtail_enabled) {
    LongTailSpec spec = cfg.longtail;
    spec.classes = out.train.classes;
    auto [subset, counts] = build_long_tailed(out.train, spec);
    out.train = std::move(subset);
    out.counts = std::move(counts);
  } else {
    auto hist = out.train.class_histogram();
    out.counts.n.assign(hist.begin(), hist.end());
    try {
      out.counts.validate();
    } catch (const std::exception&) {
      throw std::runtime_error(
          "config: source class counts are not descending; enable dataset.longtail to "
          "re-rank classes");
    }
  }
  return out;
}

}  // namespace reat
