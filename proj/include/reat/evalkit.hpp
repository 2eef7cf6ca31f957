#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "reat/attacks.hpp"
#include "reat/datasets.hpp"
#include "reat/models.hpp"
#include "reat/rebalance.hpp"

namespace reat {

struct AeHistogram {
  std::vector<uint64_t> counts;
  size_t epoch = 0;

  uint64_t total() const {
    uint64_t t = 0;
    for (uint64_t c : counts) t += c;
    return t;
  }
  // raw Shannon entropy (nats) of the empirical prediction distribution
  double entropy() const {
    uint64_t t = total();
    if (t == 0) return 0.0;
    double h = 0.0;
    for (uint64_t c : counts) {
      if (c == 0) continue;
      double p = static_cast<double>(c) / static_cast<double>(t);
      h -= p * std::log(p);
    }
    return h;
  }
  double normalized_entropy() const {
    if (counts.size() < 2) return 0.0;
    return entropy() / std::log(static_cast<double>(counts.size()));
  }
};

inline AeHistogram ae_prediction_histogram(std::span<const int> predicted_labels1, size_t classes,
                                           size_t epoch = 0) {
  AeHistogram h;
  h.counts.assign(classes, 0);
  h.epoch = epoch;
  for (int y : predicted_labels1) {
    if (y < 1 || y > static_cast<int>(classes))
      throw std::invalid_argument("ae_prediction_histogram: label out of range");
    ++h.counts[y - 1];
  }
  return h;
}

inline AeHistogram ae_prediction_histogram(const ModelState& model, const Tensor& aes,
                                           size_t epoch = 0) {
  std::vector<int> pred = predict_labels(forward(model, aes).logits);
  return ae_prediction_histogram(pred, model.spec.classes, epoch);
}

enum class BoundMode { normalized, raw };

// Empirical lower-bound estimate for the robust risk: per class, clean
// error plus prediction-flip term, averaged over classes. `raw` sums counts
// exactly as the theorem statement; `normalized` uses per-class rates.
struct RobustRiskBound {
  BoundMode mode = BoundMode::normalized;
  std::vector<double> clean_err;  // rates (normalized) or counts (raw)
  std::vector<double> flip;
  double value = 0.0;
};

inline RobustRiskBound robust_risk_lower_bound(const std::vector<double>& clean_err,
                                               const std::vector<double>& flip, size_t classes,
                                               BoundMode mode) {
  if (clean_err.size() != classes || flip.size() != classes)
    throw std::invalid_argument("robust_risk_lower_bound: per-class data missing");
  RobustRiskBound b;
  b.mode = mode;
  b.clean_err = clean_err;
  b.flip = flip;
  double sum = 0.0;
  for (size_t i = 0; i < classes; ++i) sum += clean_err[i] + flip[i];
  b.value = sum / static_cast<double>(classes);
  return b;
}

struct PerAttackResult {
  AttackConfig cfg;
  std::vector<double> robust_acc;  // per class
  std::vector<double> flip_rate;   // per class, F(x_adv) != F(x)
  std::vector<size_t> flip_count;
  double robust_balanced = 0.0;
  double robust_weighted = 0.0;
  AeHistogram histogram;
};

struct EvalReport {
  size_t classes = 0;
  std::vector<size_t> support;  // test samples per class
  std::vector<double> clean_acc;
  std::vector<size_t> clean_err_count;
  double clean_balanced = 0.0;
  double clean_weighted = 0.0;
  std::vector<PerAttackResult> attacks;
  RobustRiskBound bound;          // from the strongest attack
  std::string bound_attack;       // its name
  // rebalance view of the strongest attack's prediction histogram
  std::vector<double> effective_number, rbl_weight, omega;
};

namespace detail {
inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}
}  // namespace detail

// Clean + robust per-class accuracy for every configured attack. Asserts
// the pointwise union-bound identity on each sample.
inline EvalReport evaluate(const ModelState& model, const LabeledDataset& test,
                           const std::vector<AttackConfig>& attacks,
                           const ClassCounts* train_counts = nullptr, size_t batch_size = 128) {
  test.validate();
  size_t c = model.spec.classes;
  if (test.classes != c) throw std::invalid_argument("evaluate: class count mismatch");

  EvalReport rep;
  rep.classes = c;
  rep.support.assign(c, 0);
  std::vector<size_t> clean_correct(c, 0);
  std::vector<int> clean_pred(test.size());

  std::vector<size_t> order(test.size());
  std::iota(order.begin(), order.end(), 0);

  for (size_t start = 0; start < test.size(); start += batch_size) {
    size_t end = std::min(test.size(), start + batch_size);
    std::span<const size_t> idx(order.data() + start, end - start);
    Tensor xb = assemble_batch(test, idx);
    std::vector<int> pred = predict_labels(forward(model, xb).logits);
    for (size_t i = 0; i < idx.size(); ++i) {
      int y = test.labels[idx[i]];
      ++rep.support[y - 1];
      clean_pred[idx[i]] = pred[i];
      if (pred[i] == y) ++clean_correct[y - 1];
    }
  }
  size_t total_correct = 0;
  for (size_t i = 0; i < c; ++i) {
    if (rep.support[i] == 0)
      throw std::runtime_error("evaluate: class " + std::to_string(i + 1) + " missing from test set");
    rep.clean_acc.push_back(static_cast<double>(clean_correct[i]) /
                            static_cast<double>(rep.support[i]));
    rep.clean_err_count.push_back(rep.support[i] - clean_correct[i]);
    total_correct += clean_correct[i];
  }
  rep.clean_balanced = detail::mean(rep.clean_acc);
  rep.clean_weighted = static_cast<double>(total_correct) / static_cast<double>(test.size());

  for (const AttackConfig& cfg : attacks) {
    PerAttackResult r;
    r.cfg = cfg;
    std::vector<size_t> robust_correct(c, 0), flips(c, 0);
    std::vector<int> adv_pred_all;
    adv_pred_all.reserve(test.size());
    size_t batch_index = 0;
    for (size_t start = 0; start < test.size(); start += batch_size, ++batch_index) {
      size_t end = std::min(test.size(), start + batch_size);
      std::span<const size_t> idx(order.data() + start, end - start);
      Tensor xb = assemble_batch(test, idx);
      std::vector<int> yb = batch_labels(test, idx);
      Tensor xadv = pgd_attack(model, xb, yb, cfg, batch_index);
      std::vector<int> pred = predict_labels(forward(model, xadv).logits);
      for (size_t i = 0; i < idx.size(); ++i) {
        int y = yb[i];
        bool robust_err = pred[i] != y;
        bool clean_err = clean_pred[idx[i]] != y;
        bool flip = pred[i] != clean_pred[idx[i]];
        // union-bound identity, pointwise
        if (robust_err && !clean_err && !flip)
          throw std::runtime_error("evaluate: union-bound identity violated");
        if (!robust_err) ++robust_correct[y - 1];
        if (flip) ++flips[y - 1];
        adv_pred_all.push_back(pred[i]);
      }
    }
    for (size_t i = 0; i < c; ++i) {
      r.robust_acc.push_back(static_cast<double>(robust_correct[i]) /
                             static_cast<double>(rep.support[i]));
      r.flip_rate.push_back(static_cast<double>(flips[i]) / static_cast<double>(rep.support[i]));
      r.flip_count.push_back(flips[i]);
    }
    r.robust_balanced = detail::mean(r.robust_acc);
    size_t rc = std::accumulate(robust_correct.begin(), robust_correct.end(), size_t{0});
    r.robust_weighted = static_cast<double>(rc) / static_cast<double>(test.size());
    r.histogram = ae_prediction_histogram(adv_pred_all, c);
    rep.attacks.push_back(std::move(r));
  }

  if (!rep.attacks.empty()) {
    // strongest attack = lowest balanced robust accuracy, ties to the first
    size_t strongest = 0;
    for (size_t i = 1; i < rep.attacks.size(); ++i)
      if (rep.attacks[i].robust_balanced < rep.attacks[strongest].robust_balanced) strongest = i;
    const PerAttackResult& s = rep.attacks[strongest];
    std::vector<double> clean_err(c);
    for (size_t i = 0; i < c; ++i) clean_err[i] = 1.0 - rep.clean_acc[i];
    rep.bound = robust_risk_lower_bound(clean_err, s.flip_rate, c, BoundMode::normalized);
    rep.bound_attack = s.cfg.name;
    if (train_counts) {
      AePredictionCounts counts(c);
      for (size_t i = 0; i < c; ++i) counts.n[i] = s.histogram.counts[i];
      EffectiveNumbers en = effective_numbers(counts, *train_counts);
      RblWeights w = rbl_weights(en);
      OmegaWeights om = omega_weights(*train_counts);
      rep.effective_number = en.value;
      rep.rbl_weight = w.w;
      rep.omega = om.omega;
    }
  }
  return rep;
}

// Euclidean distances between AEs generated from the same clean sample in
// consecutive epochs, grouped by true class (1-based key in the result).
inline std::map<int, std::vector<double>> consecutive_ae_distances(
    const std::map<size_t, std::pair<int, std::vector<double>>>& prev,
    const std::map<size_t, std::pair<int, std::vector<double>>>& cur) {
  std::map<int, std::vector<double>> out;
  for (const auto& [id, entry] : cur) {
    auto it = prev.find(id);
    if (it == prev.end())
      throw std::invalid_argument("consecutive_ae_distances: sample " + std::to_string(id) +
                                  " missing from previous epoch");
    const auto& [label, x] = entry;
    const auto& px = it->second.second;
    if (px.size() != x.size())
      throw std::invalid_argument("consecutive_ae_distances: shape mismatch for sample " +
                                  std::to_string(id));
    double n2 = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
      double d = x[i] - px[i];
      n2 += d * d;
    }
    out[label].push_back(std::sqrt(n2));
  }
  return out;
}

// CSV of (sample id, true label, K feature values, predicted label).
inline void export_features(const ModelState& model, const LabeledDataset& ds,
                            const std::string& path, size_t batch_size = 128) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_features: cannot open " + path);
  out << "id,label";
  for (size_t k = 0; k < model.spec.feature_dim; ++k) out << ",f" << k;
  out << ",predicted\n";
  std::vector<size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  for (size_t start = 0; start < ds.size(); start += batch_size) {
    size_t end = std::min(ds.size(), start + batch_size);
    std::span<const size_t> idx(order.data() + start, end - start);
    ForwardOutput fo = forward(model, assemble_batch(ds, idx));
    std::vector<int> pred = predict_labels(fo.logits);
    for (size_t i = 0; i < idx.size(); ++i) {
      out << idx[i] << "," << ds.labels[idx[i]];
      for (size_t k = 0; k < model.spec.feature_dim; ++k)
        out << "," << fmt_double(fo.features.at(i, k));
      out << "," << pred[i] << "\n";
    }
  }
  if (!out) throw std::runtime_error("export_features: write failed for " + path);
}

inline nlohmann::json attack_config_json(const AttackConfig& a) {
  return {{"name", a.name},
          {"norm", norm_name(a.norm)},
          {"epsilon", a.epsilon},
          {"alpha", a.alpha},
          {"steps", a.steps},
          {"objective", attack_objective_name(a.objective)},
          {"step_rule", step_rule_name(a.step_rule)},
          {"logit_scale", a.logit_scale},
          {"random_start", a.random_start},
          {"seed", a.seed}};
}

inline nlohmann::json report_json(const EvalReport& rep) {
  nlohmann::json j;
  j["classes"] = rep.classes;
  j["support"] = rep.support;
  j["clean"] = {{"per_class_accuracy", rep.clean_acc},
                {"balanced_accuracy", rep.clean_balanced},
                {"weighted_accuracy", rep.clean_weighted}};
  j["attacks"] = nlohmann::json::array();
  for (const PerAttackResult& a : rep.attacks) {
    nlohmann::json ja;
    ja["config"] = attack_config_json(a.cfg);
    ja["per_class_robust_accuracy"] = a.robust_acc;
    ja["per_class_flip_rate"] = a.flip_rate;
    ja["balanced_robust_accuracy"] = a.robust_balanced;
    ja["weighted_robust_accuracy"] = a.robust_weighted;
    ja["ae_prediction_histogram"] = a.histogram.counts;
    ja["ae_prediction_entropy"] = a.histogram.entropy();
    ja["ae_prediction_normalized_entropy"] = a.histogram.normalized_entropy();
    j["attacks"].push_back(std::move(ja));
  }
  if (!rep.attacks.empty()) {
    j["robust_risk_lower_bound"] = {
        {"note", "empirical estimate; maximizer approximated by the strongest configured attack"},
        {"attack", rep.bound_attack},
        {"mode", rep.bound.mode == BoundMode::normalized ? "normalized" : "raw"},
        {"value", rep.bound.value}};
    if (!rep.effective_number.empty()) {
      j["rebalance_view"] = {{"effective_number", rep.effective_number},
                             {"rbl_weight", rep.rbl_weight},
                             {"omega", rep.omega}};
    }
  }
  return j;
}

}  // namespace reat
