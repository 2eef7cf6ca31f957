#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "reat/graph.hpp"
#include "reat/rng.hpp"
#include "reat/tensor.hpp"

namespace reat {

enum class Arch { mlp, cnn_lite };
enum class HeadKind { linear, cosine };

inline Arch arch_from(const std::string& s) {
  if (s == "mlp") return Arch::mlp;
  if (s == "cnn-lite") return Arch::cnn_lite;
  throw std::invalid_argument("unknown arch '" + s + "'");
}
inline const char* arch_name(Arch a) { return a == Arch::mlp ? "mlp" : "cnn-lite"; }

inline HeadKind head_from(const std::string& s) {
  if (s == "linear") return HeadKind::linear;
  if (s == "cosine") return HeadKind::cosine;
  throw std::invalid_argument("unknown head '" + s + "'");
}
inline const char* head_name(HeadKind h) { return h == HeadKind::linear ? "linear" : "cosine"; }

// mlp: input -> widths... -> feature_dim (relu between layers, none after
// the feature layer), head on top. cnn-lite: 3x3 pad-1 conv + relu + 2x2
// avg-pool per channel width, then flatten -> feature_dim.
struct ModelSpec {
  Arch arch = Arch::mlp;
  std::vector<size_t> widths;  // mlp hidden widths / cnn channel widths
  size_t feature_dim = 32;
  HeadKind head = HeadKind::linear;
  double tau = 16.0;  // cosine temperature
  size_t classes = 0;
  Shape input_shape;  // {d} for mlp, {c,h,w} for cnn-lite
  uint64_t init_seed = 1;

  void validate() const {
    if (classes < 2) throw std::invalid_argument("model spec: classes must be >= 2");
    if (feature_dim < 2) throw std::invalid_argument("model spec: feature_dim must be >= 2");
    if (head == HeadKind::cosine && tau <= 0.0)
      throw std::invalid_argument("model spec: cosine tau must be > 0");
    for (size_t w : widths)
      if (w == 0) throw std::invalid_argument("model spec: zero layer width");
    if (arch == Arch::mlp && input_shape.size() != 1)
      throw std::invalid_argument("model spec: mlp expects rank-1 input shape");
    if (arch == Arch::cnn_lite && input_shape.size() != 3)
      throw std::invalid_argument("model spec: cnn-lite expects {channels,h,w} input shape");
  }
};

struct ModelState {
  ModelSpec spec;
  std::vector<std::string> names;
  std::vector<Tensor> params;
  size_t epoch = 0;
  std::string rng_digest = "0";

  size_t param_count() const {
    size_t n = 0;
    for (const Tensor& p : params) n += p.numel();
    return n;
  }
};

namespace detail {
struct LayerPlan {
  std::string name;
  Shape shape;
  size_t fan_in;
  bool zero_init;  // biases
};

inline std::vector<LayerPlan> plan_params(const ModelSpec& spec) {
  std::vector<LayerPlan> plan;
  if (spec.arch == Arch::mlp) {
    size_t in = spec.input_shape[0];
    std::vector<size_t> chain = spec.widths;
    chain.push_back(spec.feature_dim);
    for (size_t l = 0; l < chain.size(); ++l) {
      plan.push_back({"l" + std::to_string(l) + ".W", {in, chain[l]}, in, false});
      plan.push_back({"l" + std::to_string(l) + ".b", {chain[l]}, in, true});
      in = chain[l];
    }
  } else {
    size_t ch = spec.input_shape[0];
    size_t h = spec.input_shape[1], w = spec.input_shape[2];
    for (size_t l = 0; l < spec.widths.size(); ++l) {
      size_t co = spec.widths[l];
      plan.push_back({"conv" + std::to_string(l) + ".K", {co, ch, 3, 3}, ch * 9, false});
      plan.push_back({"conv" + std::to_string(l) + ".b", {co}, ch * 9, true});
      ch = co;
      if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("model spec: spatial dims must stay even for pooling");
      h /= 2;
      w /= 2;
    }
    size_t flat = ch * h * w;
    plan.push_back({"fc.W", {flat, spec.feature_dim}, flat, false});
    plan.push_back({"fc.b", {spec.feature_dim}, flat, true});
  }
  if (spec.head == HeadKind::linear) {
    plan.push_back({"head.W", {spec.feature_dim, spec.classes}, spec.feature_dim, false});
    plan.push_back({"head.b", {spec.classes}, spec.feature_dim, true});
  } else {
    // direction matrix only, no bias
    plan.push_back({"head.D", {spec.classes, spec.feature_dim}, spec.feature_dim, false});
  }
  return plan;
}
}  // namespace detail

// He-style uniform init, U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero.
// Deterministic per init_seed.
inline ModelState init_model(const ModelSpec& spec) {
  spec.validate();
  ModelState m;
  m.spec = spec;
  RandomStream rng(spec.init_seed);
  for (const detail::LayerPlan& p : detail::plan_params(spec)) {
    Tensor t(p.shape);
    if (!p.zero_init) {
      double limit = std::sqrt(6.0 / static_cast<double>(p.fan_in));
      for (double& v : t.data) v = rng.uniform(-limit, limit);
    }
    m.names.push_back(p.name);
    m.params.push_back(std::move(t));
  }
  return m;
}

struct ModelGraph {
  Record rec;
  Var x;
  std::vector<Var> params;
  Var features;
  Var prob_features;
  Var logits;
};

inline ModelGraph build_model_graph(const ModelSpec& spec, size_t batch, bool x_differentiable,
                                    bool params_differentiable) {
  spec.validate();
  ModelGraph g;
  Shape in_shape;
  in_shape.push_back(batch);
  in_shape.insert(in_shape.end(), spec.input_shape.begin(), spec.input_shape.end());
  g.x = g.rec.input("x", in_shape, x_differentiable);
  auto plan = detail::plan_params(spec);
  for (const auto& p : plan) g.params.push_back(g.rec.input(p.name, p.shape, params_differentiable));

  Var h = g.x;
  size_t pi = 0;
  if (spec.arch == Arch::mlp) {
    size_t layers = spec.widths.size() + 1;
    for (size_t l = 0; l < layers; ++l) {
      h = g.rec.add_row(g.rec.matmul(h, g.params[pi]), g.params[pi + 1]);
      pi += 2;
      if (l + 1 < layers) h = g.rec.relu(h);
    }
  } else {
    for (size_t l = 0; l < spec.widths.size(); ++l) {
      h = g.rec.chan_bias(g.rec.conv2d(h, g.params[pi], 1), g.params[pi + 1]);
      pi += 2;
      h = g.rec.avg_pool2(g.rec.relu(h));
    }
    const Shape& hs = g.rec.shape_of(h);
    h = g.rec.reshape(h, {hs[0], hs[1] * hs[2] * hs[3]});
    h = g.rec.add_row(g.rec.matmul(h, g.params[pi]), g.params[pi + 1]);
    pi += 2;
  }
  g.features = h;
  g.prob_features = g.rec.softmax_row(h);
  if (spec.head == HeadKind::linear) {
    g.logits = g.rec.add_row(g.rec.matmul(h, g.params[pi]), g.params[pi + 1]);
  } else {
    Var fhat = g.rec.row_normalize(h);
    Var dhat = g.rec.row_normalize(g.params[pi]);
    g.logits = g.rec.scale(g.rec.matmul_nt(fhat, dhat), spec.tau);
  }
  return g;
}

inline void bind_params(ModelGraph& g, const ModelState& m) {
  for (size_t i = 0; i < g.params.size(); ++i) g.rec.bind(g.params[i], m.params[i]);
}

struct ForwardOutput {
  Tensor features;
  Tensor logits;
  Tensor prob_features;
};

inline ForwardOutput forward(const ModelState& m, const Tensor& batch) {
  if (batch.rank() < 1 || Shape(batch.shape.begin() + 1, batch.shape.end()) != m.spec.input_shape)
    throw std::invalid_argument("forward: batch shape " + shape_str(batch.shape) +
                                " does not match model input " + shape_str(m.spec.input_shape));
  ModelGraph g = build_model_graph(m.spec, batch.shape[0], false, false);
  bind_params(g, m);
  g.rec.bind(g.x, batch);
  g.rec.forward();
  return {g.rec.value(g.features), g.rec.value(g.logits), g.rec.value(g.prob_features)};
}

inline std::vector<int> predict_labels(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (size_t i = 0; i < logits.rows(); ++i) {
    size_t best = 0;
    for (size_t j = 1; j < logits.cols(); ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    out[i] = static_cast<int>(best) + 1;
  }
  return out;
}

// z_i = tau * cos(angle between f and direction row i); |z_i| <= tau.
inline Tensor cosine_logits(const Tensor& features, const Tensor& directions, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("cosine_logits: tau must be > 0");
  if (features.rank() != 2 || directions.rank() != 2 || features.cols() != directions.cols())
    throw std::invalid_argument("cosine_logits: incompatible shapes");
  size_t b = features.rows(), c = directions.rows(), k = features.cols();
  Tensor out({b, c});
  std::vector<double> dnorm(c);
  for (size_t j = 0; j < c; ++j) {
    double s = 0.0;
    for (size_t t = 0; t < k; ++t) s += directions.at(j, t) * directions.at(j, t);
    if (s <= 0.0) throw std::runtime_error("cosine_logits: zero direction row " + std::to_string(j));
    dnorm[j] = std::sqrt(s);
  }
  for (size_t i = 0; i < b; ++i) {
    double fs = 0.0;
    for (size_t t = 0; t < k; ++t) fs += features.at(i, t) * features.at(i, t);
    if (fs <= 0.0) throw std::runtime_error("cosine_logits: zero feature vector " + std::to_string(i));
    double fn = std::sqrt(fs);
    for (size_t j = 0; j < c; ++j) {
      double dot = 0.0;
      for (size_t t = 0; t < k; ++t) dot += features.at(i, t) * directions.at(j, t);
      out.at(i, j) = tau * dot / (fn * dnorm[j]);
    }
  }
  return out;
}

// Checkpoint file: one text header line of key=value pairs, then raw
// little-endian float32 blobs in parameter order.
inline void save_checkpoint(const ModelState& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  const ModelSpec& s = m.spec;
  std::ostringstream hdr;
  hdr << "format=reat-ckpt version=1"
      << " arch=" << arch_name(s.arch) << " widths=" << join(s.widths, ",")
      << " feature_dim=" << s.feature_dim << " head=" << head_name(s.head)
      << " tau=" << fmt_double(s.tau) << " classes=" << s.classes
      << " input=" << join(s.input_shape, ",") << " init_seed=" << s.init_seed
      << " epoch=" << m.epoch << " rng=" << m.rng_digest << "\n";
  out << hdr.str();
  std::vector<float> buf;
  for (const Tensor& p : m.params) {
    buf.resize(p.numel());
    for (size_t i = 0; i < p.numel(); ++i) buf[i] = static_cast<float>(p.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

namespace detail {
inline std::vector<size_t> parse_size_list(const std::string& s) {
  std::vector<size_t> out;
  if (s.empty()) return out;
  for (const std::string& part : split(s, ','))
    out.push_back(static_cast<size_t>(std::stoull(part)));
  return out;
}
}  // namespace detail

inline ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("checkpoint: missing header in " + path);
  std::map<std::string, std::string> kv;
  for (const std::string& field : split(header, ' ')) {
    auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    kv[field.substr(0, eq)] = field.substr(eq + 1);
  }
  if (kv["format"] != "reat-ckpt")
    throw std::runtime_error("checkpoint: " + path + " is not a reat checkpoint");
  if (kv["version"] != "1")
    throw std::runtime_error("checkpoint: unsupported version '" + kv["version"] + "' in " + path);

  ModelSpec spec;
  spec.arch = arch_from(kv.at("arch"));
  spec.widths = detail::parse_size_list(kv.at("widths"));
  spec.feature_dim = std::stoull(kv.at("feature_dim"));
  spec.head = head_from(kv.at("head"));
  spec.tau = std::stod(kv.at("tau"));
  spec.classes = std::stoull(kv.at("classes"));
  spec.input_shape = detail::parse_size_list(kv.at("input"));
  spec.init_seed = std::stoull(kv.at("init_seed"));
  spec.validate();

  ModelState m;
  m.spec = spec;
  m.epoch = std::stoull(kv.at("epoch"));
  m.rng_digest = kv.at("rng");

  size_t expected_bytes = 0;
  auto plan = detail::plan_params(spec);
  for (const auto& p : plan) expected_bytes += shape_numel(p.shape) * sizeof(float);
  std::streampos body_start = in.tellg();
  in.seekg(0, std::ios::end);
  size_t actual_bytes = static_cast<size_t>(in.tellg() - body_start);
  if (actual_bytes != expected_bytes)
    throw std::runtime_error("checkpoint: " + path + " blob is " + std::to_string(actual_bytes) +
                             " bytes, expected " + std::to_string(expected_bytes));
  in.seekg(body_start);

  std::vector<float> buf;
  for (const auto& p : plan) {
    Tensor t(p.shape);
    buf.resize(t.numel());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw std::runtime_error("checkpoint: truncated blob in " + path);
    for (size_t i = 0; i < t.numel(); ++i) t.data[i] = static_cast<double>(buf[i]);
    m.names.push_back(p.name);
    m.params.push_back(std::move(t));
  }
  return m;
}

}  // namespace reat
