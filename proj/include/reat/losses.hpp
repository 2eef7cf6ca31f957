#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "reat/graph.hpp"
#include "reat/rebalance.hpp"

namespace reat {

// Loss graph builders. All take 1-based labels and append nodes to an
// existing record so model forward + loss share one tape.

namespace detail {
inline std::vector<int> to_zero_based(const std::vector<int>& labels1, size_t classes,
                                      const char* op) {
  std::vector<int> out(labels1.size());
  for (size_t i = 0; i < labels1.size(); ++i) {
    if (labels1[i] < 1 || labels1[i] > static_cast<int>(classes))
      throw std::invalid_argument(std::string(op) + ": label " + std::to_string(labels1[i]) +
                                  " outside 1.." + std::to_string(classes));
    out[i] = labels1[i] - 1;
  }
  return out;
}

// mean of w_y * (-log softmax_y); weights == nullptr means plain CE
inline Var weighted_ce(Record& rec, Var logits, const std::vector<int>& labels1,
                       const std::vector<double>* class_weights, const char* op) {
  size_t c = rec.shape_of(logits)[1];
  size_t b = rec.shape_of(logits)[0];
  std::vector<int> y0 = to_zero_based(labels1, c, op);
  Var ls = rec.log_softmax_row(logits);
  Var picked = rec.gather_label(ls, y0);
  Var nll = rec.neg(picked);
  if (class_weights) {
    if (class_weights->size() != c)
      throw std::invalid_argument(std::string(op) + ": weight vector has wrong length");
    Tensor w({b});
    for (size_t i = 0; i < b; ++i) w.data[i] = (*class_weights)[y0[i]];
    nll = rec.mul(nll, rec.constant(std::move(w)));
  }
  return rec.scale(rec.sum_all(nll), 1.0 / static_cast<double>(b));
}
}  // namespace detail

inline Var cross_entropy(Record& rec, Var logits, const std::vector<int>& labels1) {
  return detail::weighted_ce(rec, logits, labels1, nullptr, "cross_entropy");
}

// -log(N_y e^{z_y} / sum_j N_j e^{z_j}), built as CE on logits shifted by
// ln(N_i) - max_j ln(N_j). The shift is zero for equal counts, so the
// balanced case reduces to CE bitwise.
inline Var balanced_softmax(Record& rec, Var logits, const std::vector<int>& labels1,
                            const ClassCounts& counts) {
  counts.validate();
  size_t c = rec.shape_of(logits)[1];
  if (counts.classes() != c)
    throw std::invalid_argument("balanced_softmax: counts do not match logit width");
  Tensor shift({c});
  double mx = -1e300;
  for (size_t i = 0; i < c; ++i) {
    shift.data[i] = std::log(static_cast<double>(counts.n[i]));
    mx = std::max(mx, shift.data[i]);
  }
  for (size_t i = 0; i < c; ++i) shift.data[i] -= mx;
  Var shifted = rec.add_row(logits, rec.constant(std::move(shift)));
  return cross_entropy(rec, shifted, labels1);
}

// mean of -(1 - p_y)^gamma * log p_y
inline Var focal_loss(Record& rec, Var logits, const std::vector<int>& labels1, double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("focal_loss: gamma must be >= 0");
  size_t c = rec.shape_of(logits)[1];
  size_t b = rec.shape_of(logits)[0];
  std::vector<int> y0 = detail::to_zero_based(labels1, c, "focal_loss");
  Var ls = rec.log_softmax_row(logits);
  Var log_py = rec.gather_label(ls, y0);
  Var one_minus_p = rec.offset(rec.neg(rec.exp(log_py)), 1.0);
  Var focal = rec.mul(rec.pow_const(one_minus_p, gamma), rec.neg(log_py));
  return rec.scale(rec.sum_all(focal), 1.0 / static_cast<double>(b));
}

// Class-balanced CE: weights (1-beta)/(1-beta^{N_i}) with beta from the
// total count, normalized to sum to C.
inline Var effective_number_loss(Record& rec, Var logits, const std::vector<int>& labels1,
                                 const ClassCounts& counts) {
  counts.validate();
  size_t c = rec.shape_of(logits)[1];
  if (counts.classes() != c)
    throw std::invalid_argument("effective_number_loss: counts do not match logit width");
  double total = static_cast<double>(counts.total());
  double beta = (total - 1.0) / total;
  std::vector<double> w(c);
  double sum = 0.0;
  for (size_t i = 0; i < c; ++i) {
    w[i] = (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(counts.n[i])));
    sum += w[i];
  }
  for (double& v : w) v *= static_cast<double>(c) / sum;
  return detail::weighted_ce(rec, logits, labels1, &w, "effective_number_loss");
}

// CE on margin-adjusted logits z_y - delta_y, delta_i = max_margin *
// N_i^{-1/4} / max_j N_j^{-1/4}.
inline Var ldam_loss(Record& rec, Var logits, const std::vector<int>& labels1,
                     const ClassCounts& counts, double max_margin = 0.5) {
  if (max_margin <= 0.0) throw std::invalid_argument("ldam_loss: margin scale must be > 0");
  counts.validate();
  size_t c = rec.shape_of(logits)[1];
  size_t b = rec.shape_of(logits)[0];
  if (counts.classes() != c)
    throw std::invalid_argument("ldam_loss: counts do not match logit width");
  std::vector<int> y0 = detail::to_zero_based(labels1, c, "ldam_loss");
  std::vector<double> delta(c);
  double mx = 0.0;
  for (size_t i = 0; i < c; ++i) {
    delta[i] = std::pow(static_cast<double>(counts.n[i]), -0.25);
    mx = std::max(mx, delta[i]);
  }
  for (double& d : delta) d *= max_margin / mx;
  Tensor margins({b, c});
  for (size_t i = 0; i < b; ++i) margins.at(i, y0[i]) = delta[y0[i]];
  Var adjusted = rec.sub(logits, rec.constant(std::move(margins)));
  return cross_entropy(rec, adjusted, labels1);
}

// Eq-style re-balancing loss: per-sample w_y * (-log softmax_y), mean over
// the batch. Maximized during AE generation.
inline Var rbl_loss(Record& rec, Var logits, const std::vector<int>& labels1,
                    const RblWeights& weights) {
  size_t c = rec.shape_of(logits)[1];
  if (weights.classes() != c)
    throw std::invalid_argument("rbl_loss: weights do not match logit width");
  return detail::weighted_ce(rec, logits, labels1, &weights.w, "rbl_loss");
}

// Tail feature-margin regularizer over probabilistic features softmax(f).
//
// For each batch member i with a tail label, and every j in the batch:
//   R -= (1/B) * (-1)^{1(y_i=y_j)} * (omega_{y_i}+omega_{y_j}) * KLD(f^p_j || f^p_i)
// Returns R/S (S = number of tail samples), or a constant 0 when S = 0.
// Same-class pairs enter R positively (pulled together under minimization),
// cross-class pairs negatively (pushed apart). Gradients flow through both
// sides of every KLD.
inline Var tail_regularizer(Record& rec, Var features, const std::vector<int>& labels1,
                            const OmegaWeights& omega, const ClassPartition& partition) {
  size_t b = rec.shape_of(features)[0];
  size_t c = omega.classes();
  std::vector<int> y0 = detail::to_zero_based(labels1, c, "tail_regularizer");
  size_t tail_samples = 0;
  for (int y : labels1)
    if (partition.is_tail(y)) ++tail_samples;
  if (tail_samples == 0) return rec.constant(Tensor::scalar(0.0));

  // pair coefficients a[i][j]; KLD(j||i) = t_j - sum_k P[j,k] * LS[i,k]
  // with t_j = sum_k P[j,k] * LS[j,k], so the whole sum collapses to
  //   dot(colsum(A), t) - sum(LS .* (A x P))
  double norm = 1.0 / (static_cast<double>(b) * static_cast<double>(tail_samples));
  Tensor a({b, b});
  Tensor colsum({b});
  for (size_t i = 0; i < b; ++i) {
    if (!partition.is_tail(labels1[i])) continue;
    for (size_t j = 0; j < b; ++j) {
      double sign = (y0[i] == y0[j]) ? -1.0 : 1.0;
      double joint = omega.omega[y0[i]] + omega.omega[y0[j]];
      double coeff = -norm * sign * joint;
      a.at(i, j) = coeff;
      colsum.data[j] += coeff;
    }
  }
  Var prob = rec.softmax_row(features);
  Var logprob = rec.log_softmax_row(features);
  Var neg_entropy = rec.row_sum(rec.mul(prob, logprob));  // t_j
  Var term1 = rec.sum_all(rec.mul(neg_entropy, rec.constant(std::move(colsum))));
  Var mixed = rec.matmul(rec.constant(std::move(a)), prob);
  Var term2 = rec.sum_all(rec.mul(logprob, mixed));
  return rec.sub(term1, term2);
}

enum class LtLoss { ce, fl, en, ldam, bsl };

inline LtLoss lt_loss_from(const std::string& s) {
  if (s == "ce") return LtLoss::ce;
  if (s == "fl") return LtLoss::fl;
  if (s == "en") return LtLoss::en;
  if (s == "ldam") return LtLoss::ldam;
  if (s == "bsl") return LtLoss::bsl;
  throw std::invalid_argument("unknown lt loss '" + s + "'");
}

inline const char* lt_loss_name(LtLoss k) {
  switch (k) {
    case LtLoss::ce: return "ce";
    case LtLoss::fl: return "fl";
    case LtLoss::en: return "en";
    case LtLoss::ldam: return "ldam";
    case LtLoss::bsl: return "bsl";
  }
  return "?";
}

struct LossParams {
  double focal_gamma = 2.0;
  double ldam_max_margin = 0.5;
  double lambda_tail = 1.0;
};

inline Var lt_loss(Record& rec, LtLoss kind, Var logits, const std::vector<int>& labels1,
                   const ClassCounts& counts, const LossParams& params = {}) {
  switch (kind) {
    case LtLoss::ce: return cross_entropy(rec, logits, labels1);
    case LtLoss::fl: return focal_loss(rec, logits, labels1, params.focal_gamma);
    case LtLoss::en: return effective_number_loss(rec, logits, labels1, counts);
    case LtLoss::ldam: return ldam_loss(rec, logits, labels1, counts, params.ldam_max_margin);
    case LtLoss::bsl: return balanced_softmax(rec, logits, labels1, counts);
  }
  throw std::invalid_argument("lt_loss: bad kind");
}

// L = L_lt + lambda * TAIL; the TAIL subgraph is skipped entirely when
// lambda == 0 so the reduction to the plain loss is bitwise.
inline Var total_loss(Record& rec, LtLoss kind, Var logits, Var features,
                      const std::vector<int>& labels1, const ClassCounts& counts,
                      const OmegaWeights& omega, const ClassPartition& partition,
                      const LossParams& params = {}) {
  if (params.lambda_tail < 0.0) throw std::invalid_argument("total_loss: lambda must be >= 0");
  Var base = lt_loss(rec, kind, logits, labels1, counts, params);
  if (params.lambda_tail == 0.0) return base;
  Var tail = tail_regularizer(rec, features, labels1, omega, partition);
  return rec.add(base, rec.scale(tail, params.lambda_tail));
}

// Plain-tensor CW margin max_{j != y} z_j - z_y per sample.
inline std::vector<double> cw_objective(const Tensor& logits, const std::vector<int>& labels1) {
  size_t b = logits.rows(), c = logits.cols();
  if (c < 2) throw std::invalid_argument("cw_objective: needs at least 2 classes");
  if (labels1.size() != b) throw std::invalid_argument("cw_objective: label count mismatch");
  std::vector<double> out(b);
  for (size_t i = 0; i < b; ++i) {
    int y0 = labels1[i] - 1;
    if (y0 < 0 || y0 >= static_cast<int>(c))
      throw std::invalid_argument("cw_objective: label out of range");
    double best = -1e300;
    for (size_t j = 0; j < c; ++j)
      if (static_cast<int>(j) != y0) best = std::max(best, logits.at(i, j));
    out[i] = best - logits.at(i, y0);
  }
  return out;
}

// Graph form of the CW margin, summed over the batch (PGD ascends it).
inline Var cw_margin_sum(Record& rec, Var logits, const std::vector<int>& labels1) {
  size_t c = rec.shape_of(logits)[1];
  std::vector<int> y0 = detail::to_zero_based(labels1, c, "cw_margin_sum");
  Var top_other = rec.row_max_except(logits, y0);
  Var zy = rec.gather_label(logits, y0);
  return rec.sum_all(rec.sub(top_other, zy));
}

}  // namespace reat
