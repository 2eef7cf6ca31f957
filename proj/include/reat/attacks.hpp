#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "reat/losses.hpp"
#include "reat/models.hpp"
#include "reat/rng.hpp"

namespace reat {

enum class Norm { linf, l2 };
enum class AttackObjective { ce, rbl, cw };
enum class StepRule { sign, weighted_sign };

inline Norm norm_from(const std::string& s) {
  if (s == "linf") return Norm::linf;
  if (s == "l2") return Norm::l2;
  throw std::invalid_argument("unknown norm '" + s + "'");
}
inline const char* norm_name(Norm n) { return n == Norm::linf ? "linf" : "l2"; }

inline AttackObjective attack_objective_from(const std::string& s) {
  if (s == "ce") return AttackObjective::ce;
  if (s == "rbl") return AttackObjective::rbl;
  if (s == "cw") return AttackObjective::cw;
  throw std::invalid_argument("unknown attack objective '" + s + "'");
}
inline const char* attack_objective_name(AttackObjective o) {
  switch (o) {
    case AttackObjective::ce: return "ce";
    case AttackObjective::rbl: return "rbl";
    case AttackObjective::cw: return "cw";
  }
  return "?";
}

inline StepRule step_rule_from(const std::string& s) {
  if (s == "sign") return StepRule::sign;
  if (s == "weighted-sign") return StepRule::weighted_sign;
  throw std::invalid_argument("unknown step rule '" + s + "'");
}
inline const char* step_rule_name(StepRule r) {
  return r == StepRule::sign ? "sign" : "weighted-sign";
}

struct AttackConfig {
  std::string name = "pgd";
  Norm norm = Norm::linf;
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int steps = 10;
  AttackObjective objective = AttackObjective::ce;
  StepRule step_rule = StepRule::sign;
  double logit_scale = 1.0;
  bool random_start = false;
  uint64_t seed = 0;
  // per-class weights for the rbl objective / weighted-sign rule
  std::vector<double> class_weights;
  // look weights up at the current predicted label instead of the true one
  bool weight_by_predicted = false;

  void validate() const {
    if (epsilon < 0.0) throw std::invalid_argument("attack: epsilon must be >= 0");
    if (steps < 0) throw std::invalid_argument("attack: steps must be >= 0");
    if (steps > 0 && alpha <= 0.0)
      throw std::invalid_argument("attack: alpha must be > 0 when steps > 0");
    if (logit_scale <= 0.0) throw std::invalid_argument("attack: logit_scale must be > 0");
  }
};

namespace detail {
inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline void project_sample(double* x, const double* x0, size_t d, Norm norm, double eps) {
  if (norm == Norm::linf) {
    for (size_t i = 0; i < d; ++i)
      x[i] = std::clamp(std::clamp(x[i], x0[i] - eps, x0[i] + eps), 0.0, 1.0);
  } else {
    double n2 = 0.0;
    for (size_t i = 0; i < d; ++i) {
      double dlt = x[i] - x0[i];
      n2 += dlt * dlt;
    }
    double n = std::sqrt(n2);
    if (n > eps) {
      double f = eps / n;
      for (size_t i = 0; i < d; ++i) x[i] = x0[i] + (x[i] - x0[i]) * f;
    }
    // clamping never grows |x_i - x0_i| for x0 in [0,1]
    for (size_t i = 0; i < d; ++i) x[i] = std::clamp(x[i], 0.0, 1.0);
  }
}
}  // namespace detail

// Projected gradient ascent inside the eps-ball intersected with [0,1].
// `sign` step: alpha * sign(g) (linf) or alpha * g/|g|_2 (l2); the
// weighted-sign rule additionally scales each sample's step by its class
// weight w_y, which is what makes the re-balancing weights functionally
// active (a positive per-sample factor cannot change gradient signs).
inline Tensor pgd_attack(const ModelState& model, const Tensor& x, const std::vector<int>& labels1,
                         const AttackConfig& cfg, uint64_t batch_index = 0) {
  cfg.validate();
  if (x.shape.empty() || x.shape[0] != labels1.size())
    throw std::invalid_argument("pgd_attack: batch/label size mismatch");
  if (cfg.epsilon == 0.0) return x;

  size_t b = x.shape[0];
  size_t d = x.numel() / b;
  size_t c = model.spec.classes;
  bool weighted = cfg.step_rule == StepRule::weighted_sign;
  bool needs_weights = weighted || cfg.objective == AttackObjective::rbl;
  if (needs_weights && cfg.class_weights.size() != c)
    throw std::invalid_argument("pgd_attack: class weights missing or wrong length");
  for (int y : labels1)
    if (y < 1 || y > static_cast<int>(c))
      throw std::invalid_argument("pgd_attack: label out of range");

  ModelGraph g = build_model_graph(model.spec, b, true, false);
  bind_params(g, model);
  Var scaled = cfg.logit_scale == 1.0 ? g.logits : g.rec.scale(g.logits, cfg.logit_scale);
  Var objective;
  RblWeights rblw;
  switch (cfg.objective) {
    case AttackObjective::ce:
      objective = cross_entropy(g.rec, scaled, labels1);
      break;
    case AttackObjective::rbl:
      rblw.w = cfg.class_weights;
      objective = rbl_loss(g.rec, scaled, labels1, rblw);
      break;
    case AttackObjective::cw:
      objective = cw_margin_sum(g.rec, scaled, labels1);
      break;
  }

  Tensor adv = x;
  if (cfg.random_start) {
    RandomStream rng = RandomStream::derived(cfg.seed, batch_index);
    if (cfg.norm == Norm::linf) {
      for (double& v : adv.data) v += rng.uniform(-cfg.epsilon, cfg.epsilon);
    } else {
      // gaussian direction, radius eps * u^(1/d)
      for (size_t s = 0; s < b; ++s) {
        std::vector<double> dir(d);
        double n2 = 0.0;
        for (size_t i = 0; i < d; ++i) {
          dir[i] = rng.gaussian();
          n2 += dir[i] * dir[i];
        }
        double r = cfg.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
        double f = n2 > 0.0 ? r / std::sqrt(n2) : 0.0;
        for (size_t i = 0; i < d; ++i) adv.data[s * d + i] += dir[i] * f;
      }
    }
    for (size_t s = 0; s < b; ++s)
      detail::project_sample(&adv.data[s * d], &x.data[s * d], d, cfg.norm, cfg.epsilon);
  }

  std::vector<double> step_weight(b, 1.0);
  auto refresh_weights = [&](const std::vector<int>& ref_labels) {
    if (!weighted) return;
    for (size_t s = 0; s < b; ++s) step_weight[s] = cfg.class_weights[ref_labels[s] - 1];
  };
  refresh_weights(labels1);

  for (int it = 0; it < cfg.steps; ++it) {
    g.rec.bind(g.x, adv);
    try {
      g.rec.forward();
      g.rec.backward(objective, Tensor::scalar(1.0));
    } catch (const std::exception& e) {
      throw std::runtime_error("pgd_attack: aborted at step " + std::to_string(it) + " on batch " +
                               std::to_string(batch_index) + ": " + e.what());
    }
    if (cfg.weight_by_predicted && needs_weights)
      refresh_weights(predict_labels(g.rec.value(g.logits)));
    const Tensor& grad = g.rec.grad(g.x);
    for (size_t s = 0; s < b; ++s) {
      double step = cfg.alpha * step_weight[s];
      double* xp = &adv.data[s * d];
      const double* gp = &grad.data[s * d];
      if (cfg.norm == Norm::linf) {
        for (size_t i = 0; i < d; ++i) xp[i] += step * detail::sgn(gp[i]);
      } else {
        double n2 = 0.0;
        for (size_t i = 0; i < d; ++i) n2 += gp[i] * gp[i];
        if (n2 > 0.0) {
          double f = step / std::sqrt(n2);
          for (size_t i = 0; i < d; ++i) xp[i] += f * gp[i];
        }
      }
      detail::project_sample(xp, &x.data[s * d], d, cfg.norm, cfg.epsilon);
    }
  }
  return adv;
}

// Logit-scaling adaptive attack: the objective sees s * z, the returned AEs
// are evaluated against the unscaled model.
inline Tensor adaptive_scale_attack(const ModelState& model, const Tensor& x,
                                    const std::vector<int>& labels1, AttackConfig cfg,
                                    double scale, uint64_t batch_index = 0) {
  if (scale <= 0.0) throw std::invalid_argument("adaptive_scale_attack: scale must be > 0");
  cfg.logit_scale = scale;
  return pgd_attack(model, x, labels1, cfg, batch_index);
}

}  // namespace reat
