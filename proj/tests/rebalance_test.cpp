#include <gtest/gtest.h>

#include "reat/rebalance.hpp"
#include "reat/rng.hpp"

using namespace reat;

namespace {

// independent oracle: E_n as the plain geometric series 1 + b + ... + b^(n-1)
double geometric_series_e(double beta, uint64_t n) {
  double e = 0.0, term = 1.0;
  for (uint64_t k = 0; k < n; ++k) {
    e += term;
    term *= beta;
  }
  return e;
}

AePredictionCounts counts_of(std::vector<uint64_t> n) {
  AePredictionCounts c(n.size());
  c.n = std::move(n);
  return c;
}

}  // namespace

TEST(RecordPredictions, EmptyEpochAllZero) {
  AePredictionCounts acc(3);
  EXPECT_EQ(acc.n, (std::vector<uint64_t>{0, 0, 0}));
  EXPECT_EQ(acc.total(), 0u);
}

TEST(RecordPredictions, Counting) {
  AePredictionCounts acc(3);
  std::vector<int> labels{1, 1, 3};
  record_predictions(acc, labels);
  EXPECT_EQ(acc.n, (std::vector<uint64_t>{2, 0, 1}));
}

TEST(RecordPredictions, MergeEqualsConcatenation) {
  std::vector<int> part1{1, 2, 2}, part2{3, 2, 1, 1};
  AePredictionCounts a(3), b(3), whole(3);
  record_predictions(a, part1);
  record_predictions(b, part2);
  merge(a, b);
  std::vector<int> all = part1;
  all.insert(all.end(), part2.begin(), part2.end());
  record_predictions(whole, all);
  EXPECT_EQ(a.n, whole.n);
}

TEST(RecordPredictions, OutOfRangeRejected) {
  AePredictionCounts acc(3);
  std::vector<int> bad{4};
  EXPECT_THROW(record_predictions(acc, bad), std::invalid_argument);
  std::vector<int> zero{0};
  EXPECT_THROW(record_predictions(acc, zero), std::invalid_argument);
}

TEST(EffectiveNumbers, SmoothedSingleCountGivesOne) {
  // N = 10, raw count 0 -> smoothed 1 -> E = (1-beta)/(1-beta) = 1
  EffectiveNumbers e = effective_numbers(counts_of({0}), ClassCounts{{10}});
  EXPECT_DOUBLE_EQ(e.beta[0], 0.9);
  EXPECT_DOUBLE_EQ(e.value[0], 1.0);
}

TEST(EffectiveNumbers, GeometricSeriesWorkedExample) {
  // N = 10 (beta 0.9), smoothed n = 3 -> E = 1 + 0.9 + 0.81 = 2.71
  EffectiveNumbers e = effective_numbers(counts_of({2}), ClassCounts{{10}});
  EXPECT_NEAR(e.value[0], 2.71, 1e-12);
}

TEST(EffectiveNumbers, AsymptoteApproachesCleanCount) {
  // n -> infinity => E -> 1/(1-beta) = N_i; in doubles the series saturates
  // at exactly N_i once beta^n drops below an ulp
  EffectiveNumbers e = effective_numbers(counts_of({100000000}), ClassCounts{{50}});
  EXPECT_NEAR(e.value[0], 50.0, 1e-9);
  EXPECT_LE(e.value[0], 50.0);
}

TEST(EffectiveNumbers, MatchesSeriesOracleAndBounds) {
  RandomStream rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    size_t big_n = 2 + rng.index(500);
    // keep beta^n above rounding so the strict bound is representable
    uint64_t raw = rng.index(std::min<uint64_t>(200, 18 * big_n));
    EffectiveNumbers e = effective_numbers(counts_of({raw}), ClassCounts{{big_n}});
    double oracle = geometric_series_e(e.beta[0], raw + 1);
    ASSERT_NEAR(e.value[0], oracle, 1e-9 * oracle);
    ASSERT_GE(e.value[0], 1.0);
    ASSERT_LT(e.value[0], static_cast<double>(big_n));
    // strictly increasing in n
    EffectiveNumbers e_next = effective_numbers(counts_of({raw + 1}), ClassCounts{{big_n}});
    ASSERT_GT(e_next.value[0], e.value[0]);
  }
}

TEST(EffectiveNumbers, SingleSampleClassClampsToOne) {
  EffectiveNumbers e = effective_numbers(counts_of({7}), ClassCounts{{1}});
  EXPECT_DOUBLE_EQ(e.beta[0], 0.0);
  EXPECT_DOUBLE_EQ(e.value[0], 1.0);
}

TEST(RblWeights, EqualEffectiveNumbersGiveUnitWeights) {
  EffectiveNumbers e;
  e.value = {2.5, 2.5, 2.5, 2.5};
  RblWeights w = rbl_weights(e);
  for (double v : w.w) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_TRUE(w.is_uniform());
}

TEST(RblWeights, WorkedExample) {
  // E = [1,1,2], C = 3, sum 1/E = 2.5 -> w = [1.2, 1.2, 0.6]
  EffectiveNumbers e;
  e.value = {1.0, 1.0, 2.0};
  RblWeights w = rbl_weights(e);
  EXPECT_NEAR(w.w[0], 1.2, 1e-12);
  EXPECT_NEAR(w.w[1], 1.2, 1e-12);
  EXPECT_NEAR(w.w[2], 0.6, 1e-12);
}

TEST(RblWeights, LargestEffectiveNumberGetsSmallestWeight) {
  EffectiveNumbers e;
  e.value = {4.0, 9.0, 2.0};
  RblWeights w = rbl_weights(e);
  EXPECT_LT(w.w[1], w.w[0]);
  EXPECT_LT(w.w[1], w.w[2]);
}

TEST(RblWeights, SumIsClassCountAndMonotone) {
  RandomStream rng(33);
  for (int trial = 0; trial < 1000; ++trial) {
    size_t c = 2 + rng.index(20);
    ClassCounts counts;
    AePredictionCounts acc(c);
    for (size_t i = 0; i < c; ++i) {
      counts.n.push_back(500 - i);  // descending, >= 2
      acc.n[i] = rng.index(300);
    }
    RblWeights w = rbl_weights(effective_numbers(acc, counts));
    double sum = 0.0;
    for (double v : w.w) {
      ASSERT_GT(v, 0.0);
      ASSERT_LT(v, static_cast<double>(c));  // supremum bound under smoothing
      sum += v;
    }
    ASSERT_NEAR(sum, static_cast<double>(c), 1e-12);

    // bump one class's count: its weight drops, every other weight rises
    size_t k = rng.index(c);
    AePredictionCounts bumped = acc;
    bumped.n[k] += 1 + rng.index(50);
    RblWeights w2 = rbl_weights(effective_numbers(bumped, counts));
    ASSERT_LT(w2.w[k], w.w[k]);
    for (size_t i = 0; i < c; ++i)
      if (i != k) ASSERT_GT(w2.w[i], w.w[i]);
  }
}

TEST(OmegaWeights, EqualCountsGiveSqrtC) {
  OmegaWeights om = omega_weights(ClassCounts{{30, 30, 30, 30}});
  for (double v : om.omega) EXPECT_NEAR(v, 2.0, 1e-12);  // sqrt(4)
}

TEST(OmegaWeights, WorkedExample) {
  OmegaWeights om = omega_weights(ClassCounts{{4, 1}});
  EXPECT_NEAR(om.omega[0], std::sqrt(1.25), 1e-12);  // 1.1180
  EXPECT_NEAR(om.omega[1], std::sqrt(5.0), 1e-12);   // 2.2361
}

TEST(OmegaWeights, NonDecreasingAndTailDominates) {
  OmegaWeights om = omega_weights(ClassCounts{{100, 40, 40, 7, 2}});
  for (size_t i = 0; i + 1 < om.omega.size(); ++i) EXPECT_LE(om.omega[i], om.omega[i + 1]);
  EXPECT_GT(om.omega.back(), om.omega.front());
}
