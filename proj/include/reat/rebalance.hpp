#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "reat/datasets.hpp"

namespace reat {

// Per-epoch counts of AE predicted labels. Mergeable by summation; the
// trainer resets it at epoch boundaries.
struct AePredictionCounts {
  std::vector<uint64_t> n;

  explicit AePredictionCounts(size_t classes = 0) : n(classes, 0) {}
  size_t classes() const { return n.size(); }
  uint64_t total() const {
    uint64_t t = 0;
    for (uint64_t v : n) t += v;
    return t;
  }
  void reset() { n.assign(n.size(), 0); }
};

inline void record_predictions(AePredictionCounts& acc, std::span<const int> labels1) {
  for (int y : labels1) {
    if (y < 1 || y > static_cast<int>(acc.classes()))
      throw std::invalid_argument("record_predictions: label " + std::to_string(y) +
                                  " outside 1.." + std::to_string(acc.classes()));
    ++acc.n[y - 1];
  }
}

inline void merge(AePredictionCounts& into, const AePredictionCounts& other) {
  if (into.classes() != other.classes())
    throw std::invalid_argument("merge: accumulator class counts differ");
  for (size_t i = 0; i < into.n.size(); ++i) into.n[i] += other.n[i];
}

// E_n = (1 - beta^n) / (1 - beta) with class-related beta = (N_i - 1) / N_i.
// Counts are Laplace-smoothed (n+1) so E >= 1 and 1/E is always defined.
struct EffectiveNumbers {
  std::vector<double> beta;
  std::vector<double> value;  // E per class

  size_t classes() const { return value.size(); }
};

inline EffectiveNumbers effective_numbers(const AePredictionCounts& counts,
                                          const ClassCounts& clean) {
  if (counts.classes() != clean.classes())
    throw std::invalid_argument("effective_numbers: class counts differ");
  clean.validate();
  EffectiveNumbers out;
  for (size_t i = 0; i < clean.classes(); ++i) {
    double ni = static_cast<double>(clean.n[i]);
    double beta = (ni - 1.0) / ni;
    double n_smoothed = static_cast<double>(counts.n[i]) + 1.0;
    double e;
    if (beta == 0.0) {
      e = 1.0;  // single-sample class: every draw overlaps
    } else {
      e = (1.0 - std::pow(beta, n_smoothed)) / (1.0 - beta);
    }
    out.beta.push_back(beta);
    out.value.push_back(e);
  }
  return out;
}

// w_i = C / (E_i * sum_j 1/E_j); weights sum to C.
struct RblWeights {
  std::vector<double> w;

  size_t classes() const { return w.size(); }
  static RblWeights uniform(size_t classes) {
    RblWeights r;
    r.w.assign(classes, 1.0);
    return r;
  }
  bool is_uniform() const {
    for (double v : w)
      if (v != 1.0) return false;
    return true;
  }
};

inline RblWeights rbl_weights(const EffectiveNumbers& e) {
  RblWeights out;
  double inv_sum = 0.0;
  for (double v : e.value) {
    if (!(v > 0.0)) throw std::invalid_argument("rbl_weights: effective number must be positive");
    inv_sum += 1.0 / v;
  }
  double c = static_cast<double>(e.classes());
  for (double v : e.value) out.w.push_back(c / (v * inv_sum));
  return out;
}

// omega_i = sqrt(sum_j N_j / N_i), the smoothed inverse class frequency.
struct OmegaWeights {
  std::vector<double> omega;

  size_t classes() const { return omega.size(); }
};

inline OmegaWeights omega_weights(const ClassCounts& counts) {
  counts.validate();
  OmegaWeights out;
  double total = static_cast<double>(counts.total());
  for (size_t v : counts.n) out.omega.push_back(std::sqrt(total / static_cast<double>(v)));
  return out;
}

}  // namespace reat
