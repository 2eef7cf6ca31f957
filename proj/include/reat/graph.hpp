#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "reat/tensor.hpp"

namespace reat {

// Reverse-mode autodiff on an explicit tape. A Record is built once per
// graph topology (ops append nodes in topological order), then inputs are
// re-bound and forward/backward re-run as often as needed. All math is in
// 64-bit floats; execution is sequential and bitwise deterministic.

struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

enum class OpKind {
  input,
  constant,
  add,            // same-shape elementwise
  add_row,        // [r,c] + [c]
  chan_bias,      // [b,c,h,w] + [c]
  sub,
  mul,
  scale,          // x * const
  offset,         // x + const
  pow_const,      // x ^ const
  exp,
  relu,
  matmul,         // [m,k] x [k,n]
  matmul_nt,      // [m,k] x [n,k]^T
  row_normalize,  // rows scaled to unit l2 norm
  softmax_row,
  log_softmax_row,
  row_sum,        // [m,k] -> [m]
  sum_all,        // -> [1]
  gather_label,   // out[r] = x[r, label[r]]
  row_max_except, // out[r] = max_{j != label[r]} x[r,j]
  conv2d,         // stride 1, zero padding
  avg_pool2,      // 2x2, stride 2
  reshape,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::constant: return "constant";
    case OpKind::add: return "add";
    case OpKind::add_row: return "add_row";
    case OpKind::chan_bias: return "chan_bias";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::offset: return "offset";
    case OpKind::pow_const: return "pow_const";
    case OpKind::exp: return "exp";
    case OpKind::relu: return "relu";
    case OpKind::matmul: return "matmul";
    case OpKind::matmul_nt: return "matmul_nt";
    case OpKind::row_normalize: return "row_normalize";
    case OpKind::softmax_row: return "softmax_row";
    case OpKind::log_softmax_row: return "log_softmax_row";
    case OpKind::row_sum: return "row_sum";
    case OpKind::sum_all: return "sum_all";
    case OpKind::gather_label: return "gather_label";
    case OpKind::row_max_except: return "row_max_except";
    case OpKind::conv2d: return "conv2d";
    case OpKind::avg_pool2: return "avg_pool2";
    case OpKind::reshape: return "reshape";
  }
  return "?";
}

struct Node {
  OpKind op;
  int a = -1, b = -1;
  double c = 0.0;           // scale / offset / exponent
  Shape shape;              // output shape
  std::vector<int> labels;  // gather_label / row_max_except, 0-based columns
  int pad = 0;              // conv2d zero padding
  bool requires_grad = false;
  bool differentiable = false;  // inputs only
  std::string name;             // inputs only
  Tensor value;
  Tensor grad;
  bool bound = false;  // inputs only
};

class Record {
 public:
  Var input(std::string name, Shape shape, bool differentiable = true) {
    Node n;
    n.op = OpKind::input;
    n.shape = std::move(shape);
    n.name = std::move(name);
    n.differentiable = differentiable;
    n.requires_grad = differentiable;
    for (const Node& other : nodes_)
      if (other.op == OpKind::input && other.name == n.name)
        throw std::invalid_argument("record: duplicate input name '" + n.name + "'");
    nodes_.push_back(std::move(n));
    inputs_.push_back(static_cast<int>(nodes_.size()) - 1);
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(Tensor t) {
    Node n;
    n.op = OpKind::constant;
    n.shape = t.shape;
    n.value = std::move(t);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Var add(Var a, Var b) { return binary(OpKind::add, a, b); }
  Var sub(Var a, Var b) { return binary(OpKind::sub, a, b); }
  Var mul(Var a, Var b) { return binary(OpKind::mul, a, b); }

  Var add_row(Var m, Var row) {
    const Shape& ms = at(m).shape;
    const Shape& rs = at(row).shape;
    if (ms.size() != 2 || rs.size() != 1 || ms[1] != rs[0])
      throw std::invalid_argument(shape_err("add_row", ms, rs));
    return push(OpKind::add_row, m, row, ms);
  }

  Var chan_bias(Var x, Var bias) {
    const Shape& xs = at(x).shape;
    const Shape& bs = at(bias).shape;
    if (xs.size() != 4 || bs.size() != 1 || xs[1] != bs[0])
      throw std::invalid_argument(shape_err("chan_bias", xs, bs));
    return push(OpKind::chan_bias, x, bias, xs);
  }

  Var scale(Var x, double k) { return unary(OpKind::scale, x, k); }
  Var offset(Var x, double k) { return unary(OpKind::offset, x, k); }
  Var pow_const(Var x, double p) { return unary(OpKind::pow_const, x, p); }
  Var exp(Var x) { return unary(OpKind::exp, x); }
  Var relu(Var x) { return unary(OpKind::relu, x); }
  Var neg(Var x) { return scale(x, -1.0); }

  Var matmul(Var a, Var b) {
    const Shape& as = at(a).shape;
    const Shape& bs = at(b).shape;
    if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
      throw std::invalid_argument(shape_err("matmul", as, bs));
    return push(OpKind::matmul, a, b, {as[0], bs[1]});
  }

  Var matmul_nt(Var a, Var b) {
    const Shape& as = at(a).shape;
    const Shape& bs = at(b).shape;
    if (as.size() != 2 || bs.size() != 2 || as[1] != bs[1])
      throw std::invalid_argument(shape_err("matmul_nt", as, bs));
    return push(OpKind::matmul_nt, a, b, {as[0], bs[0]});
  }

  Var row_normalize(Var x) { return rowop(OpKind::row_normalize, x); }
  Var softmax_row(Var x) { return rowop(OpKind::softmax_row, x); }
  Var log_softmax_row(Var x) { return rowop(OpKind::log_softmax_row, x); }

  Var row_sum(Var x) {
    require_rank(x, 2, "row_sum");
    return push(OpKind::row_sum, x, Var{}, {at(x).shape[0]});
  }

  Var sum_all(Var x) { return push(OpKind::sum_all, x, Var{}, {1}); }

  Var gather_label(Var x, std::vector<int> labels0) {
    check_labels(x, labels0, "gather_label");
    Var v = push(OpKind::gather_label, x, Var{}, {at(x).shape[0]});
    at(v).labels = std::move(labels0);
    return v;
  }

  Var row_max_except(Var x, std::vector<int> labels0) {
    check_labels(x, labels0, "row_max_except");
    if (at(x).shape[1] < 2)
      throw std::invalid_argument("row_max_except: needs at least 2 columns");
    Var v = push(OpKind::row_max_except, x, Var{}, {at(x).shape[0]});
    at(v).labels = std::move(labels0);
    return v;
  }

  Var conv2d(Var x, Var kernel, int pad) {
    const Shape& xs = at(x).shape;
    const Shape& ks = at(kernel).shape;
    if (xs.size() != 4 || ks.size() != 4 || xs[1] != ks[1])
      throw std::invalid_argument(shape_err("conv2d", xs, ks));
    size_t ho = xs[2] + 2 * pad + 1;
    size_t wo = xs[3] + 2 * pad + 1;
    if (ho <= ks[2] || wo <= ks[3])
      throw std::invalid_argument("conv2d: kernel larger than padded input");
    ho -= ks[2];
    wo -= ks[3];
    Var v = push(OpKind::conv2d, x, kernel, {xs[0], ks[0], ho, wo});
    at(v).pad = pad;
    return v;
  }

  Var avg_pool2(Var x) {
    const Shape& xs = at(x).shape;
    if (xs.size() != 4 || xs[2] % 2 != 0 || xs[3] % 2 != 0)
      throw std::invalid_argument("avg_pool2: needs rank-4 input with even spatial dims, got " +
                                  shape_str(xs));
    return push(OpKind::avg_pool2, x, Var{}, {xs[0], xs[1], xs[2] / 2, xs[3] / 2});
  }

  Var reshape(Var x, Shape s) {
    if (shape_numel(s) != shape_numel(at(x).shape))
      throw std::invalid_argument(shape_err("reshape", at(x).shape, s));
    return push(OpKind::reshape, x, Var{}, std::move(s));
  }

  void bind(Var v, const Tensor& t) {
    Node& n = at(v);
    if (n.op != OpKind::input) throw std::invalid_argument("bind: not an input node");
    if (t.shape != n.shape)
      throw std::invalid_argument("bind('" + n.name + "'): expected " + shape_str(n.shape) +
                                  ", got " + shape_str(t.shape));
    n.value = t;
    n.bound = true;
  }

  // Executes every node in recorded order; intermediate values stay cached
  // for the following backward pass.
  void forward() {
    for (size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.op == OpKind::input) {
        if (!n.bound) throw std::runtime_error("forward: unbound input '" + n.name + "'");
        continue;
      }
      if (n.op == OpKind::constant) continue;
      compute(n);
      for (double v : n.value.data)
        if (!std::isfinite(v))
          throw std::runtime_error("forward: non-finite value in node #" + std::to_string(i) +
                                   " (" + op_name(n.op) + ")");
    }
    ++forward_count_;
  }

  const Tensor& value(Var v) const {
    const Node& n = at(v);
    if (n.op == OpKind::input && !n.bound)
      throw std::runtime_error("value: unbound input '" + n.name + "'");
    if (n.op != OpKind::input && n.op != OpKind::constant && forward_count_ == 0)
      throw std::runtime_error("value: forward has not run");
    return n.value;
  }

  // Gradient of (seed . out) w.r.t. every node that requires grad.
  // Exactly one backward per forward.
  void backward(Var out, const Tensor& seed) {
    if (forward_count_ == 0) throw std::runtime_error("backward: called before forward");
    if (backward_mark_ == forward_count_)
      throw std::runtime_error("backward: already ran for this forward pass");
    Node& root = at(out);
    if (seed.shape != root.shape)
      throw std::invalid_argument("backward: seed shape " + shape_str(seed.shape) +
                                  " does not match output " + shape_str(root.shape));
    for (Node& n : nodes_) {
      if (!n.requires_grad) continue;
      n.grad.shape = n.shape;
      n.grad.data.assign(shape_numel(n.shape), 0.0);
    }
    if (root.requires_grad) root.grad = seed;
    for (int i = out.idx; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.op == OpKind::input || n.op == OpKind::constant) continue;
      propagate(n);
    }
    backward_mark_ = forward_count_;
  }

  const Tensor& grad(Var v) const {
    const Node& n = at(v);
    if (!n.requires_grad)
      throw std::runtime_error("grad: node does not require gradients");
    if (backward_mark_ != forward_count_ || forward_count_ == 0)
      throw std::runtime_error("grad: no backward pass for the current forward");
    return n.grad;
  }

  // Gradients for the differentiable inputs only; constants and inputs
  // declared non-differentiable are absent.
  std::map<std::string, Tensor> input_gradients() const {
    std::map<std::string, Tensor> out;
    for (int i : inputs_) {
      const Node& n = nodes_[i];
      if (n.differentiable) out[n.name] = grad(Var{i});
    }
    return out;
  }

  size_t node_count() const { return nodes_.size(); }
  const Shape& shape_of(Var v) const { return at(v).shape; }

 private:
  Node& at(Var v) {
    if (!v.valid() || v.idx >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("record: invalid var");
    return nodes_[v.idx];
  }
  const Node& at(Var v) const { return const_cast<Record*>(this)->at(v); }

  static std::string shape_err(const char* op, const Shape& a, const Shape& b) {
    return std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
  }

  void require_rank(Var x, size_t r, const char* op) {
    if (at(x).shape.size() != r)
      throw std::invalid_argument(std::string(op) + ": expected rank-" + std::to_string(r) +
                                  " input, got " + shape_str(at(x).shape));
  }

  void check_labels(Var x, const std::vector<int>& labels0, const char* op) {
    require_rank(x, 2, op);
    const Shape& s = at(x).shape;
    if (labels0.size() != s[0])
      throw std::invalid_argument(std::string(op) + ": " + std::to_string(labels0.size()) +
                                  " labels for " + std::to_string(s[0]) + " rows");
    for (int l : labels0)
      if (l < 0 || l >= static_cast<int>(s[1]))
        throw std::invalid_argument(std::string(op) + ": label out of range");
  }

  Var rowop(OpKind k, Var x) {
    require_rank(x, 2, op_name(k));
    return push(k, x, Var{}, at(x).shape);
  }

  Var unary(OpKind k, Var x, double c = 0.0) {
    Var v = push(k, x, Var{}, at(x).shape);
    at(v).c = c;
    return v;
  }

  Var binary(OpKind k, Var a, Var b) {
    if (at(a).shape != at(b).shape)
      throw std::invalid_argument(shape_err(op_name(k), at(a).shape, at(b).shape));
    return push(k, a, b, at(a).shape);
  }

  Var push(OpKind k, Var a, Var b, Shape out_shape) {
    Node n;
    n.op = k;
    n.a = a.idx;
    n.b = b.idx;
    n.shape = std::move(out_shape);
    n.requires_grad = (a.valid() && at(a).requires_grad) || (b.valid() && at(b).requires_grad);
    n.value = Tensor(n.shape);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  void compute(Node& n) {
    const Tensor& A = nodes_[n.a].value;
    Tensor& out = n.value;
    if (out.shape != n.shape) out = Tensor(n.shape);
    switch (n.op) {
      case OpKind::add: {
        const Tensor& B = nodes_[n.b].value;
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = A.data[i] + B.data[i];
        break;
      }
      case OpKind::sub: {
        const Tensor& B = nodes_[n.b].value;
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = A.data[i] - B.data[i];
        break;
      }
      case OpKind::mul: {
        const Tensor& B = nodes_[n.b].value;
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = A.data[i] * B.data[i];
        break;
      }
      case OpKind::add_row: {
        const Tensor& B = nodes_[n.b].value;
        size_t r = A.shape[0], c = A.shape[1];
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < c; ++j) out.data[i * c + j] = A.data[i * c + j] + B.data[j];
        break;
      }
      case OpKind::chan_bias: {
        const Tensor& B = nodes_[n.b].value;
        size_t bch = A.shape[0], ch = A.shape[1], hw = A.shape[2] * A.shape[3];
        size_t i = 0;
        for (size_t bb = 0; bb < bch; ++bb)
          for (size_t cc = 0; cc < ch; ++cc)
            for (size_t p = 0; p < hw; ++p, ++i) out.data[i] = A.data[i] + B.data[cc];
        break;
      }
      case OpKind::scale:
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = A.data[i] * n.c;
        break;
      case OpKind::offset:
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = A.data[i] + n.c;
        break;
      case OpKind::pow_const:
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = std::pow(A.data[i], n.c);
        break;
      case OpKind::exp:
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = std::exp(A.data[i]);
        break;
      case OpKind::relu:
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = A.data[i] > 0.0 ? A.data[i] : 0.0;
        break;
      case OpKind::matmul: {
        const Tensor& B = nodes_[n.b].value;
        size_t m = A.shape[0], k = A.shape[1], p = B.shape[1];
        std::fill(out.data.begin(), out.data.end(), 0.0);
        for (size_t i = 0; i < m; ++i)
          for (size_t t = 0; t < k; ++t) {
            double a = A.data[i * k + t];
            const double* brow = &B.data[t * p];
            double* orow = &out.data[i * p];
            for (size_t j = 0; j < p; ++j) orow[j] += a * brow[j];
          }
        break;
      }
      case OpKind::matmul_nt: {
        const Tensor& B = nodes_[n.b].value;
        size_t m = A.shape[0], k = A.shape[1], p = B.shape[0];
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < p; ++j) {
            double s = 0.0;
            const double* arow = &A.data[i * k];
            const double* brow = &B.data[j * k];
            for (size_t t = 0; t < k; ++t) s += arow[t] * brow[t];
            out.data[i * p + j] = s;
          }
        break;
      }
      case OpKind::row_normalize: {
        size_t r = A.shape[0], c = A.shape[1];
        for (size_t i = 0; i < r; ++i) {
          double s = 0.0;
          for (size_t j = 0; j < c; ++j) s += A.data[i * c + j] * A.data[i * c + j];
          if (s <= 0.0)
            throw std::runtime_error("row_normalize: zero vector in row " + std::to_string(i));
          double inv = 1.0 / std::sqrt(s);
          for (size_t j = 0; j < c; ++j) out.data[i * c + j] = A.data[i * c + j] * inv;
        }
        break;
      }
      case OpKind::softmax_row: {
        size_t r = A.shape[0], c = A.shape[1];
        for (size_t i = 0; i < r; ++i) {
          const double* x = &A.data[i * c];
          double m = x[0];
          for (size_t j = 1; j < c; ++j) m = std::max(m, x[j]);
          double s = 0.0;
          for (size_t j = 0; j < c; ++j) {
            out.data[i * c + j] = std::exp(x[j] - m);
            s += out.data[i * c + j];
          }
          double inv = 1.0 / s;
          for (size_t j = 0; j < c; ++j) out.data[i * c + j] *= inv;
        }
        break;
      }
      case OpKind::log_softmax_row: {
        size_t r = A.shape[0], c = A.shape[1];
        for (size_t i = 0; i < r; ++i) {
          const double* x = &A.data[i * c];
          double m = x[0];
          for (size_t j = 1; j < c; ++j) m = std::max(m, x[j]);
          double s = 0.0;
          for (size_t j = 0; j < c; ++j) s += std::exp(x[j] - m);
          double lse = std::log(s);
          for (size_t j = 0; j < c; ++j) out.data[i * c + j] = x[j] - m - lse;
        }
        break;
      }
      case OpKind::row_sum: {
        size_t r = A.shape[0], c = A.shape[1];
        for (size_t i = 0; i < r; ++i) {
          double s = 0.0;
          for (size_t j = 0; j < c; ++j) s += A.data[i * c + j];
          out.data[i] = s;
        }
        break;
      }
      case OpKind::sum_all: {
        double s = 0.0;
        for (double v : A.data) s += v;
        out.data[0] = s;
        break;
      }
      case OpKind::gather_label: {
        size_t c = A.shape[1];
        for (size_t i = 0; i < A.shape[0]; ++i) out.data[i] = A.data[i * c + n.labels[i]];
        break;
      }
      case OpKind::row_max_except: {
        size_t c = A.shape[1];
        for (size_t i = 0; i < A.shape[0]; ++i)
          out.data[i] = A.data[i * c + max_except_col(A, i, n.labels[i])];
        break;
      }
      case OpKind::conv2d: {
        const Tensor& K = nodes_[n.b].value;
        conv2d_forward(A, K, n.pad, out);
        break;
      }
      case OpKind::avg_pool2: {
        size_t b = A.shape[0], c = A.shape[1], h = A.shape[2], w = A.shape[3];
        size_t ho = h / 2, wo = w / 2;
        for (size_t bb = 0; bb < b; ++bb)
          for (size_t cc = 0; cc < c; ++cc)
            for (size_t i = 0; i < ho; ++i)
              for (size_t j = 0; j < wo; ++j) {
                const double* base = &A.data[((bb * c + cc) * h + 2 * i) * w + 2 * j];
                out.data[((bb * c + cc) * ho + i) * wo + j] =
                    0.25 * (base[0] + base[1] + base[w] + base[w + 1]);
              }
        break;
      }
      case OpKind::reshape:
        out.data = A.data;
        break;
      case OpKind::input:
      case OpKind::constant:
        break;
    }
  }

  static size_t max_except_col(const Tensor& A, size_t row, int skip) {
    size_t c = A.shape[1];
    size_t best = static_cast<size_t>(-1);
    double bv = 0.0;
    for (size_t j = 0; j < c; ++j) {
      if (static_cast<int>(j) == skip) continue;
      double v = A.data[row * c + j];
      if (best == static_cast<size_t>(-1) || v > bv) {
        best = j;
        bv = v;
      }
    }
    return best;
  }

  static void conv2d_forward(const Tensor& X, const Tensor& K, int pad, Tensor& out) {
    size_t b = X.shape[0], ci = X.shape[1], h = X.shape[2], w = X.shape[3];
    size_t co = K.shape[0], kh = K.shape[2], kw = K.shape[3];
    size_t ho = out.shape[2], wo = out.shape[3];
    std::fill(out.data.begin(), out.data.end(), 0.0);
    for (size_t bb = 0; bb < b; ++bb)
      for (size_t oc = 0; oc < co; ++oc)
        for (size_t ic = 0; ic < ci; ++ic) {
          const double* xp = &X.data[(bb * ci + ic) * h * w];
          const double* kp = &K.data[(oc * ci + ic) * kh * kw];
          double* op = &out.data[(bb * co + oc) * ho * wo];
          for (size_t i = 0; i < ho; ++i)
            for (size_t j = 0; j < wo; ++j) {
              double s = 0.0;
              for (size_t u = 0; u < kh; ++u) {
                int y = static_cast<int>(i + u) - pad;
                if (y < 0 || y >= static_cast<int>(h)) continue;
                for (size_t v = 0; v < kw; ++v) {
                  int x = static_cast<int>(j + v) - pad;
                  if (x < 0 || x >= static_cast<int>(w)) continue;
                  s += xp[y * w + x] * kp[u * kw + v];
                }
              }
              op[i * wo + j] += s;
            }
        }
  }

  void propagate(Node& n) {
    const Tensor& g = n.grad;
    Node& na = nodes_[n.a];
    Node* nb = n.b >= 0 ? &nodes_[n.b] : nullptr;
    bool ga = na.requires_grad;
    bool gb = nb && nb->requires_grad;
    const Tensor& A = na.value;
    switch (n.op) {
      case OpKind::add:
        if (ga)
          for (size_t i = 0; i < g.numel(); ++i) na.grad.data[i] += g.data[i];
        if (gb)
          for (size_t i = 0; i < g.numel(); ++i) nb->grad.data[i] += g.data[i];
        break;
      case OpKind::sub:
        if (ga)
          for (size_t i = 0; i < g.numel(); ++i) na.grad.data[i] += g.data[i];
        if (gb)
          for (size_t i = 0; i < g.numel(); ++i) nb->grad.data[i] -= g.data[i];
        break;
      case OpKind::mul:
        if (ga)
          for (size_t i = 0; i < g.numel(); ++i) na.grad.data[i] += g.data[i] * nb->value.data[i];
        if (gb)
          for (size_t i = 0; i < g.numel(); ++i) nb->grad.data[i] += g.data[i] * A.data[i];
        break;
      case OpKind::add_row: {
        size_t r = A.shape[0], c = A.shape[1];
        if (ga)
          for (size_t i = 0; i < g.numel(); ++i) na.grad.data[i] += g.data[i];
        if (gb)
          for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) nb->grad.data[j] += g.data[i * c + j];
        break;
      }
      case OpKind::chan_bias: {
        size_t bch = A.shape[0], ch = A.shape[1], hw = A.shape[2] * A.shape[3];
        if (ga)
          for (size_t i = 0; i < g.numel(); ++i) na.grad.data[i] += g.data[i];
        if (gb) {
          size_t i = 0;
          for (size_t bb = 0; bb < bch; ++bb)
            for (size_t cc = 0; cc < ch; ++cc)
              for (size_t p = 0; p < hw; ++p, ++i) nb->grad.data[cc] += g.data[i];
        }
        break;
      }
      case OpKind::scale:
        if (ga)
          for (size_t i = 0; i < g.numel(); ++i) na.grad.data[i] += g.data[i] * n.c;
        break;
      case OpKind::offset:
        if (ga)
          for (size_t i = 0; i < g.numel(); ++i) na.grad.data[i] += g.data[i];
        break;
      case OpKind::pow_const:
        if (ga)
          for (size_t i = 0; i < g.numel(); ++i)
            na.grad.data[i] += g.data[i] * n.c * std::pow(A.data[i], n.c - 1.0);
        break;
      case OpKind::exp:
        if (ga)
          for (size_t i = 0; i < g.numel(); ++i) na.grad.data[i] += g.data[i] * n.value.data[i];
        break;
      case OpKind::relu:
        if (ga)
          for (size_t i = 0; i < g.numel(); ++i)
            if (A.data[i] > 0.0) na.grad.data[i] += g.data[i];
        break;
      case OpKind::matmul: {
        const Tensor& B = nb->value;
        size_t m = A.shape[0], k = A.shape[1], p = B.shape[1];
        if (ga)
          for (size_t i = 0; i < m; ++i)
            for (size_t t = 0; t < k; ++t) {
              double s = 0.0;
              const double* grow = &g.data[i * p];
              const double* brow = &B.data[t * p];
              for (size_t j = 0; j < p; ++j) s += grow[j] * brow[j];
              na.grad.data[i * k + t] += s;
            }
        if (gb)
          for (size_t i = 0; i < m; ++i)
            for (size_t t = 0; t < k; ++t) {
              double a = A.data[i * k + t];
              const double* grow = &g.data[i * p];
              double* brow = &nb->grad.data[t * p];
              for (size_t j = 0; j < p; ++j) brow[j] += a * grow[j];
            }
        break;
      }
      case OpKind::matmul_nt: {
        const Tensor& B = nb->value;
        size_t m = A.shape[0], k = A.shape[1], p = B.shape[0];
        if (ga)
          for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < p; ++j) {
              double gv = g.data[i * p + j];
              const double* brow = &B.data[j * k];
              double* arow = &na.grad.data[i * k];
              for (size_t t = 0; t < k; ++t) arow[t] += gv * brow[t];
            }
        if (gb)
          for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < p; ++j) {
              double gv = g.data[i * p + j];
              const double* arow = &A.data[i * k];
              double* brow = &nb->grad.data[j * k];
              for (size_t t = 0; t < k; ++t) brow[t] += gv * arow[t];
            }
        break;
      }
      case OpKind::row_normalize: {
        if (!ga) break;
        size_t r = A.shape[0], c = A.shape[1];
        for (size_t i = 0; i < r; ++i) {
          double norm = 0.0;
          for (size_t j = 0; j < c; ++j) norm += A.data[i * c + j] * A.data[i * c + j];
          norm = std::sqrt(norm);
          double dot = 0.0;
          for (size_t j = 0; j < c; ++j) dot += g.data[i * c + j] * n.value.data[i * c + j];
          for (size_t j = 0; j < c; ++j)
            na.grad.data[i * c + j] +=
                (g.data[i * c + j] - dot * n.value.data[i * c + j]) / norm;
        }
        break;
      }
      case OpKind::softmax_row: {
        if (!ga) break;
        size_t r = A.shape[0], c = A.shape[1];
        for (size_t i = 0; i < r; ++i) {
          double dot = 0.0;
          for (size_t j = 0; j < c; ++j) dot += g.data[i * c + j] * n.value.data[i * c + j];
          for (size_t j = 0; j < c; ++j)
            na.grad.data[i * c + j] += n.value.data[i * c + j] * (g.data[i * c + j] - dot);
        }
        break;
      }
      case OpKind::log_softmax_row: {
        if (!ga) break;
        size_t r = A.shape[0], c = A.shape[1];
        for (size_t i = 0; i < r; ++i) {
          double gs = 0.0;
          for (size_t j = 0; j < c; ++j) gs += g.data[i * c + j];
          for (size_t j = 0; j < c; ++j)
            na.grad.data[i * c + j] += g.data[i * c + j] - std::exp(n.value.data[i * c + j]) * gs;
        }
        break;
      }
      case OpKind::row_sum: {
        if (!ga) break;
        size_t r = A.shape[0], c = A.shape[1];
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < c; ++j) na.grad.data[i * c + j] += g.data[i];
        break;
      }
      case OpKind::sum_all:
        if (ga)
          for (size_t i = 0; i < A.numel(); ++i) na.grad.data[i] += g.data[0];
        break;
      case OpKind::gather_label: {
        if (!ga) break;
        size_t c = A.shape[1];
        for (size_t i = 0; i < A.shape[0]; ++i) na.grad.data[i * c + n.labels[i]] += g.data[i];
        break;
      }
      case OpKind::row_max_except: {
        if (!ga) break;
        size_t c = A.shape[1];
        for (size_t i = 0; i < A.shape[0]; ++i)
          na.grad.data[i * c + max_except_col(A, i, n.labels[i])] += g.data[i];
        break;
      }
      case OpKind::conv2d: {
        const Tensor& K = nb->value;
        size_t b = A.shape[0], ci = A.shape[1], h = A.shape[2], w = A.shape[3];
        size_t co = K.shape[0], kh = K.shape[2], kw = K.shape[3];
        size_t ho = n.shape[2], wo = n.shape[3];
        for (size_t bb = 0; bb < b; ++bb)
          for (size_t oc = 0; oc < co; ++oc)
            for (size_t ic = 0; ic < ci; ++ic) {
              const double* kp = &K.data[(oc * ci + ic) * kh * kw];
              const double* xp = &A.data[(bb * ci + ic) * h * w];
              const double* gp = &g.data[(bb * co + oc) * ho * wo];
              double* dxp = ga ? &na.grad.data[(bb * ci + ic) * h * w] : nullptr;
              double* dkp = gb ? &nb->grad.data[(oc * ci + ic) * kh * kw] : nullptr;
              for (size_t i = 0; i < ho; ++i)
                for (size_t j = 0; j < wo; ++j) {
                  double gv = gp[i * wo + j];
                  if (gv == 0.0) continue;
                  for (size_t u = 0; u < kh; ++u) {
                    int y = static_cast<int>(i + u) - n.pad;
                    if (y < 0 || y >= static_cast<int>(h)) continue;
                    for (size_t v = 0; v < kw; ++v) {
                      int x = static_cast<int>(j + v) - n.pad;
                      if (x < 0 || x >= static_cast<int>(w)) continue;
                      if (dxp) dxp[y * w + x] += gv * kp[u * kw + v];
                      if (dkp) dkp[u * kw + v] += gv * xp[y * w + x];
                    }
                  }
                }
            }
        break;
      }
      case OpKind::avg_pool2: {
        if (!ga) break;
        size_t b = A.shape[0], c = A.shape[1], h = A.shape[2], w = A.shape[3];
        size_t ho = h / 2, wo = w / 2;
        for (size_t bb = 0; bb < b; ++bb)
          for (size_t cc = 0; cc < c; ++cc)
            for (size_t i = 0; i < ho; ++i)
              for (size_t j = 0; j < wo; ++j) {
                double gv = 0.25 * g.data[((bb * c + cc) * ho + i) * wo + j];
                double* base = &na.grad.data[((bb * c + cc) * h + 2 * i) * w + 2 * j];
                base[0] += gv;
                base[1] += gv;
                base[w] += gv;
                base[w + 1] += gv;
              }
        break;
      }
      case OpKind::reshape:
        if (ga)
          for (size_t i = 0; i < g.numel(); ++i) na.grad.data[i] += g.data[i];
        break;
      case OpKind::input:
      case OpKind::constant:
        break;
    }
  }

  std::vector<Node> nodes_;
  std::vector<int> inputs_;
  uint64_t forward_count_ = 0;
  uint64_t backward_mark_ = 0;
};

}  // namespace reat
