#include <gtest/gtest.h>

#include "reat/grad_check.hpp"
#include "reat/graph.hpp"
#include "reat/rng.hpp"

using namespace reat;

namespace {

Tensor random_tensor(Shape shape, RandomStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// random weighting before the reduction catches misrouted gradients that a
// plain sum would cancel
Var scalarize(Record& rec, Var v, RandomStream& rng) {
  Tensor w = random_tensor(rec.shape_of(v), rng, 0.3, 1.7);
  return rec.sum_all(rec.mul(v, rec.constant(std::move(w))));
}

}  // namespace

TEST(GraphForward, IdentityAddZero) {
  Record rec;
  Var x = rec.input("x", {2});
  Var y = rec.add(x, rec.constant(Tensor({2}, {0.0, 0.0})));
  rec.bind(x, Tensor({2}, {1.0, 2.0}));
  rec.forward();
  EXPECT_EQ(rec.value(y).data, (std::vector<double>{1.0, 2.0}));
}

TEST(GraphForward, Relu) {
  Record rec;
  Var x = rec.input("x", {2});
  Var y = rec.relu(x);
  rec.bind(x, Tensor({2}, {-1.0, 3.0}));
  rec.forward();
  EXPECT_EQ(rec.value(y).data, (std::vector<double>{0.0, 3.0}));
}

TEST(GraphForward, SoftmaxSymmetry) {
  Record rec;
  Var x = rec.input("x", {1, 2});
  Var y = rec.softmax_row(x);
  rec.bind(x, Tensor({1, 2}, {0.0, 0.0}));
  rec.forward();
  EXPECT_DOUBLE_EQ(rec.value(y).data[0], 0.5);
  EXPECT_DOUBLE_EQ(rec.value(y).data[1], 0.5);
}

TEST(GraphForward, SoftmaxOverflowSafe) {
  Record rec;
  Var x = rec.input("x", {1, 2});
  Var y = rec.log_softmax_row(x);
  rec.bind(x, Tensor({1, 2}, {1000.0, 0.0}));
  rec.forward();
  EXPECT_NEAR(rec.value(y).data[0], 0.0, 1e-12);
}

TEST(GraphBackward, LinearScale) {
  Record rec;
  Var x = rec.input("x", {1});
  Var y = rec.scale(x, 3.0);
  rec.bind(x, Tensor::scalar(5.0));
  rec.forward();
  rec.backward(y, Tensor::scalar(1.0));
  EXPECT_DOUBLE_EQ(rec.grad(x).data[0], 3.0);
}

TEST(GraphBackward, Square) {
  Record rec;
  Var x = rec.input("x", {1});
  Var y = rec.mul(x, x);
  rec.bind(x, Tensor::scalar(2.0));
  rec.forward();
  rec.backward(y, Tensor::scalar(1.0));
  EXPECT_DOUBLE_EQ(rec.grad(x).data[0], 4.0);
}

TEST(GraphBackward, TwoLayerMlpMatchesFiniteDifferences) {
  RandomStream rng(42);
  Record rec;
  Var x = rec.input("x", {3, 4});
  Var w1 = rec.input("w1", {4, 5});
  Var b1 = rec.input("b1", {5});
  Var w2 = rec.input("w2", {5, 2});
  Var b2 = rec.input("b2", {2});
  Var h = rec.relu(rec.add_row(rec.matmul(x, w1), b1));
  Var z = rec.add_row(rec.matmul(h, w2), b2);
  Var loss = scalarize(rec, z, rng);

  Tensor xv = random_tensor({3, 4}, rng);
  Tensor w1v = random_tensor({4, 5}, rng);
  Tensor b1v = random_tensor({5}, rng);
  Tensor w2v = random_tensor({5, 2}, rng);
  Tensor b2v = random_tensor({2}, rng);
  rec.bind(x, xv);
  rec.bind(w1, w1v);
  rec.bind(b1, b1v);
  rec.bind(w2, w2v);
  rec.bind(b2, b2v);

  EXPECT_LT(finite_diff_check(rec, x, loss, xv), 1e-4);
  EXPECT_LT(finite_diff_check(rec, w1, loss, w1v), 1e-4);
  EXPECT_LT(finite_diff_check(rec, b1, loss, b1v), 1e-4);
  EXPECT_LT(finite_diff_check(rec, w2, loss, w2v), 1e-4);
  EXPECT_LT(finite_diff_check(rec, b2, loss, b2v), 1e-4);
}

TEST(FiniteDiff, ExactForLinear) {
  Record rec;
  Var x = rec.input("x", {4});
  Var y = rec.sum_all(x);
  RandomStream rng(7);
  EXPECT_LT(finite_diff_check(rec, x, y, random_tensor({4}, rng)), 1e-9);
}

TEST(FiniteDiff, RejectsNonScalar) {
  Record rec;
  Var x = rec.input("x", {2});
  Var y = rec.relu(x);
  EXPECT_THROW(finite_diff_check(rec, x, y, Tensor({2})), std::invalid_argument);
}

TEST(FiniteDiff, ConstantsAbsentFromGradients) {
  Record rec;
  Var x = rec.input("x", {2});
  Var frozen = rec.input("frozen", {2}, /*differentiable=*/false);
  Var y = rec.sum_all(rec.mul(x, frozen));
  rec.bind(x, Tensor({2}, {1.0, 2.0}));
  rec.bind(frozen, Tensor({2}, {3.0, 4.0}));
  rec.forward();
  rec.backward(y, Tensor::scalar(1.0));
  auto grads = rec.input_gradients();
  EXPECT_TRUE(grads.count("x"));
  EXPECT_FALSE(grads.count("frozen"));
}

// every primitive with parameters gets a finite-difference pass
TEST(GraphOps, AllPrimitivesMatchFiniteDifferences) {
  RandomStream rng(11);

  auto check = [&](auto&& build, Shape in_shape, double lo = -1.0, double hi = 1.0) {
    Record rec;
    Var x = rec.input("x", in_shape);
    Var out = scalarize(rec, build(rec, x), rng);
    Tensor point = random_tensor(in_shape, rng, lo, hi);
    double err = finite_diff_check(rec, x, out, point);
    EXPECT_LT(err, 1e-4);
  };

  check([](Record& r, Var x) { return r.sub(x, r.constant(Tensor::full({3, 2}, 0.3))); }, {3, 2});
  check([](Record& r, Var x) { return r.mul(x, r.constant(Tensor::full({3, 2}, 1.7))); }, {3, 2});
  check([](Record& r, Var x) { return r.add_row(x, r.constant(Tensor({2}, {0.1, -0.2}))); }, {3, 2});
  check([](Record& r, Var x) { return r.offset(r.scale(x, -2.0), 0.5); }, {4});
  check([](Record& r, Var x) { return r.pow_const(x, 3.0); }, {4}, 0.2, 1.5);
  check([](Record& r, Var x) { return r.exp(x); }, {4});
  check([](Record& r, Var x) { return r.relu(x); }, {6}, 0.1, 1.0);  // away from the kink
  check([](Record& r, Var x) {
    return r.matmul(x, r.constant(Tensor({3, 2}, {0.3, -0.4, 0.8, 0.1, -0.2, 0.9})));
  }, {2, 3});
  check([](Record& r, Var x) {
    return r.matmul_nt(x, r.constant(Tensor({2, 3}, {0.3, -0.4, 0.8, 0.1, -0.2, 0.9})));
  }, {2, 3});
  check([](Record& r, Var x) { return r.row_normalize(x); }, {3, 4}, 0.3, 1.3);
  check([](Record& r, Var x) { return r.softmax_row(x); }, {3, 4});
  check([](Record& r, Var x) { return r.log_softmax_row(x); }, {3, 4});
  check([](Record& r, Var x) { return r.row_sum(x); }, {3, 4});
  check([](Record& r, Var x) { return r.gather_label(x, {2, 0, 1}); }, {3, 4});
  check([](Record& r, Var x) { return r.reshape(x, {2, 6}); }, {3, 4});
  check([](Record& r, Var x) {
    return r.conv2d(x, r.constant(Tensor({2, 1, 3, 3},
                                         {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8, 0.9,
                                          -0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8, -0.9})),
                    1);
  }, {2, 1, 4, 4});
  check([](Record& r, Var x) { return r.avg_pool2(x); }, {2, 2, 4, 4});
  check([](Record& r, Var x) {
    return r.chan_bias(x, r.constant(Tensor({2}, {0.25, -0.75})));
  }, {2, 2, 2, 2});
}

TEST(GraphOps, RowMaxExceptGradientGoesToArgmax) {
  Record rec;
  Var x = rec.input("x", {2, 3});
  Var y = rec.sum_all(rec.row_max_except(x, {0, 2}));
  Tensor xv({2, 3}, {5.0, 1.0, 2.0, 0.1, 0.9, 7.0});
  rec.bind(x, xv);
  rec.forward();
  EXPECT_EQ(rec.value(y).data[0], 2.0 + 0.9);
  rec.backward(y, Tensor::scalar(1.0));
  EXPECT_EQ(rec.grad(x).data, (std::vector<double>{0, 0, 1, 0, 1, 0}));

  RandomStream rng(3);
  Record rec2;
  Var x2 = rec2.input("x", {3, 4});
  Var out = rec2.sum_all(rec2.row_max_except(x2, {1, 3, 0}));
  // spread values so no ties near the probe
  Tensor p = random_tensor({3, 4}, rng);
  for (size_t i = 0; i < p.numel(); ++i) p.data[i] += 0.5 * static_cast<double>(i);
  EXPECT_LT(finite_diff_check(rec2, x2, out, p), 1e-4);
}

TEST(GraphInvariants, GradientLinearity) {
  RandomStream rng(5);
  Tensor xv = random_tensor({2, 3}, rng);
  auto grad_of = [&](bool f_only, bool g_only) {
    Record rec;
    Var x = rec.input("x", {2, 3});
    Var f = rec.sum_all(rec.mul(x, x));
    Var g = rec.sum_all(rec.exp(rec.scale(x, 0.5)));
    Var out = f_only ? f : (g_only ? g : rec.add(f, g));
    rec.bind(x, xv);
    rec.forward();
    rec.backward(out, Tensor::scalar(1.0));
    return rec.grad(x);
  };
  Tensor gf = grad_of(true, false);
  Tensor gg = grad_of(false, true);
  Tensor gsum = grad_of(false, false);
  for (size_t i = 0; i < gsum.numel(); ++i)
    EXPECT_NEAR(gsum.data[i], gf.data[i] + gg.data[i], 1e-12);
}

TEST(GraphInvariants, RepeatedRunsBitwiseDeterministic) {
  RandomStream rng(9);
  Record rec;
  Var x = rec.input("x", {4, 3});
  Var w = rec.input("w", {3, 3});
  Var out = rec.sum_all(rec.softmax_row(rec.matmul(x, w)));
  Tensor xv = random_tensor({4, 3}, rng);
  Tensor wv = random_tensor({3, 3}, rng);

  std::vector<double> first_val, first_grad;
  for (int run = 0; run < 3; ++run) {
    rec.bind(x, xv);
    rec.bind(w, wv);
    rec.forward();
    rec.backward(out, Tensor::scalar(1.0));
    if (run == 0) {
      first_val = rec.value(out).data;
      first_grad = rec.grad(x).data;
    } else {
      EXPECT_EQ(rec.value(out).data, first_val);
      EXPECT_EQ(rec.grad(x).data, first_grad);
    }
  }
}

TEST(GraphErrors, BackwardBeforeForward) {
  Record rec;
  Var x = rec.input("x", {1});
  Var y = rec.scale(x, 2.0);
  EXPECT_THROW(rec.backward(y, Tensor::scalar(1.0)), std::runtime_error);
}

TEST(GraphErrors, OneBackwardPerForward) {
  Record rec;
  Var x = rec.input("x", {1});
  Var y = rec.scale(x, 2.0);
  rec.bind(x, Tensor::scalar(1.0));
  rec.forward();
  rec.backward(y, Tensor::scalar(1.0));
  EXPECT_THROW(rec.backward(y, Tensor::scalar(1.0)), std::runtime_error);
  rec.forward();
  EXPECT_NO_THROW(rec.backward(y, Tensor::scalar(1.0)));
}

TEST(GraphErrors, SeedShapeMismatch) {
  Record rec;
  Var x = rec.input("x", {2});
  Var y = rec.relu(x);
  rec.bind(x, Tensor({2}, {1.0, 2.0}));
  rec.forward();
  EXPECT_THROW(rec.backward(y, Tensor::scalar(1.0)), std::invalid_argument);
}

TEST(GraphErrors, ShapeMismatchAtBuild) {
  Record rec;
  Var a = rec.input("a", {2, 3});
  Var b = rec.input("b", {3, 3});
  EXPECT_THROW(rec.add(a, b), std::invalid_argument);
  EXPECT_THROW(rec.matmul(a, a), std::invalid_argument);
}

TEST(GraphErrors, BindShapeMismatch) {
  Record rec;
  Var x = rec.input("x", {2});
  EXPECT_THROW(rec.bind(x, Tensor({3})), std::invalid_argument);
}

TEST(GraphErrors, NonFiniteIntermediateNamesNode) {
  Record rec;
  Var x = rec.input("x", {1});
  Var y = rec.exp(x);
  rec.bind(x, Tensor::scalar(1e9));
  try {
    rec.forward();
    FAIL() << "expected non-finite error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("exp"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("node"), std::string::npos);
  }
  (void)y;
}

TEST(GraphErrors, UnboundInput) {
  Record rec;
  Var x = rec.input("x", {1});
  Var y = rec.relu(x);
  EXPECT_THROW(rec.forward(), std::runtime_error);
  (void)y;
}

TEST(GraphErrors, RowNormalizeZeroVector) {
  Record rec;
  Var x = rec.input("x", {1, 3});
  Var y = rec.row_normalize(x);
  rec.bind(x, Tensor({1, 3}));
  EXPECT_THROW(rec.forward(), std::runtime_error);
  (void)y;
}
