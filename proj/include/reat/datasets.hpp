#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "reat/rng.hpp"
#include "reat/tensor.hpp"

namespace reat {

// Labels are 1..C throughout; feature values live in [0,1].
struct LabeledDataset {
  size_t classes = 0;
  Shape sample_shape;
  std::vector<int> labels;
  std::vector<double> data;  // size() x sample_size, row-major

  size_t size() const { return labels.size(); }
  size_t sample_size() const { return shape_numel(sample_shape); }
  std::span<const double> sample(size_t i) const {
    return {data.data() + i * sample_size(), sample_size()};
  }

  void validate() const {
    if (classes < 2) throw std::runtime_error("dataset: needs at least 2 classes");
    if (data.size() != size() * sample_size())
      throw std::runtime_error("dataset: data/label size mismatch");
    for (int y : labels)
      if (y < 1 || y > static_cast<int>(classes))
        throw std::runtime_error("dataset: label " + std::to_string(y) + " outside 1.." +
                                 std::to_string(classes));
    for (double v : data)
      if (!(v >= 0.0 && v <= 1.0))
        throw std::runtime_error("dataset: feature value outside [0,1]");
  }

  std::vector<size_t> class_histogram() const {
    std::vector<size_t> h(classes, 0);
    for (int y : labels) ++h[y - 1];
    return h;
  }
};

struct ClassCounts {
  std::vector<size_t> n;  // descending, index 0 = class 1

  size_t classes() const { return n.size(); }
  size_t total() const { return std::accumulate(n.begin(), n.end(), size_t{0}); }
  void validate() const {
    for (size_t i = 0; i < n.size(); ++i) {
      if (n[i] < 1) throw std::runtime_error("class counts: zero count at class " +
                                             std::to_string(i + 1));
      if (i + 1 < n.size() && n[i] < n[i + 1])
        throw std::runtime_error("class counts: not descending at class " + std::to_string(i + 1));
    }
  }
};

// Head = first floor(C/3) classes, tail = classes from ceil(2C/3), body = rest.
struct ClassPartition {
  std::vector<int> head, body, tail;  // 1-based class ids

  bool is_tail(int cls) const {
    return std::find(tail.begin(), tail.end(), cls) != tail.end();
  }
};

inline ClassPartition partition_classes(size_t classes) {
  if (classes < 2) throw std::invalid_argument("partition_classes: C must be >= 2");
  ClassPartition p;
  size_t head_end = classes / 3;                 // floor(C/3)
  size_t tail_begin = (2 * classes + 2) / 3;     // ceil(2C/3)
  for (size_t c = 1; c <= classes; ++c) {
    if (c <= head_end)
      p.head.push_back(static_cast<int>(c));
    else if (c >= tail_begin)
      p.tail.push_back(static_cast<int>(c));
    else
      p.body.push_back(static_cast<int>(c));
  }
  return p;
}

enum class TailProfile { exponential, linear, balanced_small };

inline TailProfile tail_profile_from(const std::string& s) {
  if (s == "exponential") return TailProfile::exponential;
  if (s == "linear") return TailProfile::linear;
  if (s == "balanced-small") return TailProfile::balanced_small;
  throw std::invalid_argument("unknown long-tail profile '" + s + "'");
}

inline const char* tail_profile_name(TailProfile p) {
  switch (p) {
    case TailProfile::exponential: return "exponential";
    case TailProfile::linear: return "linear";
    case TailProfile::balanced_small: return "balanced-small";
  }
  return "?";
}

struct LongTailSpec {
  size_t classes = 0;
  double ur = 1.0;  // N_1 / N_C
  TailProfile profile = TailProfile::exponential;
  size_t head_count = 0;  // N_1
  uint64_t seed = 0;

  void validate() const {
    if (classes < 2) throw std::invalid_argument("long-tail spec: classes must be >= 2");
    if (ur < 1.0) throw std::invalid_argument("long-tail spec: ur must be >= 1");
    if (static_cast<double>(head_count) < ur)
      throw std::invalid_argument("long-tail spec: head_count must be >= ur");
  }
};

namespace detail {
inline size_t round_half_up(double v) {
  return static_cast<size_t>(std::floor(v + 0.5));
}
}  // namespace detail

// Per-class target counts for a profile; exponential follows
// N_i = N_1 * UR^(-(i-1)/(C-1)), linear interpolates N_1 down to N_1/UR.
// Both floor at one sample per class.
inline ClassCounts long_tail_counts(const LongTailSpec& spec) {
  spec.validate();
  ClassCounts out;
  size_t c = spec.classes;
  double n1 = static_cast<double>(spec.head_count);
  for (size_t i = 0; i < c; ++i) {
    double target = 0.0;
    switch (spec.profile) {
      case TailProfile::exponential:
        target = n1 * std::pow(spec.ur, -static_cast<double>(i) / static_cast<double>(c - 1));
        break;
      case TailProfile::linear:
        target = n1 - (n1 - n1 / spec.ur) * static_cast<double>(i) / static_cast<double>(c - 1);
        break;
      case TailProfile::balanced_small: {
        // Balanced dataset with the same total as the exponential profile.
        LongTailSpec exp_spec = spec;
        exp_spec.profile = TailProfile::exponential;
        ClassCounts exp_counts = long_tail_counts(exp_spec);
        size_t total = exp_counts.total();
        out.n.assign(c, total / c);
        for (size_t j = 0; j < total % c; ++j) ++out.n[j];
        out.validate();
        return out;
      }
    }
    out.n.push_back(std::max<size_t>(1, detail::round_half_up(target)));
  }
  out.validate();
  return out;
}

// Draws `want` samples per class without replacement, classes reordered by
// descending source frequency (ties by class id), labels remapped so class 1
// is the head. Returns the remapped dataset and the realized counts.
inline std::pair<LabeledDataset, ClassCounts> subsample_by_counts(const LabeledDataset& src,
                                                                  const ClassCounts& want,
                                                                  uint64_t seed) {
  if (want.classes() != src.classes)
    throw std::invalid_argument("subsample: count vector does not match class count");
  std::vector<std::vector<size_t>> pools(src.classes);
  for (size_t i = 0; i < src.size(); ++i) pools[src.labels[i] - 1].push_back(i);

  // rank[r] = source class id (1-based) with the r-th largest pool
  std::vector<int> rank(src.classes);
  std::iota(rank.begin(), rank.end(), 1);
  std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) {
    return pools[a - 1].size() > pools[b - 1].size();
  });

  LabeledDataset out;
  out.classes = src.classes;
  out.sample_shape = src.sample_shape;
  for (size_t r = 0; r < src.classes; ++r) {
    std::vector<size_t>& pool = pools[rank[r] - 1];
    if (pool.size() < want.n[r])
      throw std::runtime_error("subsample: class " + std::to_string(rank[r]) + " has " +
                               std::to_string(pool.size()) + " samples, need " +
                               std::to_string(want.n[r]));
    RandomStream rng = RandomStream::derived(seed, r);
    rng.shuffle(pool);
    for (size_t k = 0; k < want.n[r]; ++k) {
      size_t idx = pool[k];
      out.labels.push_back(static_cast<int>(r + 1));
      auto s = src.sample(idx);
      out.data.insert(out.data.end(), s.begin(), s.end());
    }
  }
  out.validate();
  return {out, want};
}

inline std::pair<LabeledDataset, ClassCounts> build_long_tailed(const LabeledDataset& src,
                                                                const LongTailSpec& spec) {
  if (spec.classes != src.classes)
    throw std::invalid_argument("build_long_tailed: spec classes != dataset classes");
  return subsample_by_counts(src, long_tail_counts(spec), spec.seed);
}

// Balanced dataset with the same total size as `counts` (floor + remainder
// spread over the first classes).
inline LabeledDataset build_balanced_small(const LabeledDataset& src, const ClassCounts& counts,
                                           uint64_t seed) {
  size_t total = counts.total();
  ClassCounts balanced;
  balanced.n.assign(src.classes, total / src.classes);
  for (size_t j = 0; j < total % src.classes; ++j) ++balanced.n[j];
  return subsample_by_counts(src, balanced, seed).first;
}

struct SyntheticSpec {
  size_t classes = 3;
  size_t dim = 8;
  double separation = 0.3;
  size_t n_per_class = 100;
  uint64_t seed = 1;
};

// Gaussian blobs with means on a circle of diameter `separation` in the
// first two coordinates (centered at 0.5), sigma = separation/5, clamped to
// the unit box.
inline LabeledDataset load_synthetic_gaussians(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw std::invalid_argument("synthetic: classes must be >= 2");
  if (spec.dim < 1) throw std::invalid_argument("synthetic: dim must be >= 1");
  if (spec.separation <= 0.0) throw std::invalid_argument("synthetic: separation must be > 0");
  LabeledDataset out;
  out.classes = spec.classes;
  out.sample_shape = {spec.dim};
  double sigma = spec.separation / 5.0;
  double radius = spec.separation / 2.0;
  for (size_t c = 0; c < spec.classes; ++c) {
    double angle = 6.283185307179586 * static_cast<double>(c) / static_cast<double>(spec.classes);
    std::vector<double> mean(spec.dim, 0.5);
    mean[0] = 0.5 + radius * std::cos(angle);
    if (spec.dim > 1) mean[1] = 0.5 + radius * std::sin(angle);
    RandomStream rng = RandomStream::derived(spec.seed, c);
    for (size_t s = 0; s < spec.n_per_class; ++s) {
      out.labels.push_back(static_cast<int>(c + 1));
      for (size_t d = 0; d < spec.dim; ++d) {
        double v = mean[d] + sigma * rng.gaussian();
        out.data.push_back(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  out.validate();
  return out;
}

namespace detail {
inline uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("idx: truncated header in " + path);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}
}  // namespace detail

// IDX pair (big-endian): images magic 0x00000803, labels magic 0x00000801.
// Pixel bytes map to [0,1] as byte/255; labels shift to 1-based.
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("idx: cannot open " + images_path);
  if (detail::read_be32(img, images_path) != 0x00000803u)
    throw std::runtime_error("idx: bad image magic in " + images_path);
  uint32_t count = detail::read_be32(img, images_path);
  uint32_t rows = detail::read_be32(img, images_path);
  uint32_t cols = detail::read_be32(img, images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("idx: cannot open " + labels_path);
  if (detail::read_be32(lab, labels_path) != 0x00000801u)
    throw std::runtime_error("idx: bad label magic in " + labels_path);
  uint32_t lab_count = detail::read_be32(lab, labels_path);
  if (lab_count != count)
    throw std::runtime_error("idx: image/label count mismatch (" + std::to_string(count) + " vs " +
                             std::to_string(lab_count) + ")");

  LabeledDataset out;
  out.sample_shape = {1, rows, cols};
  std::vector<unsigned char> pix(static_cast<size_t>(rows) * cols);
  int max_label = 0;
  for (uint32_t i = 0; i < count; ++i) {
    img.read(reinterpret_cast<char*>(pix.data()), pix.size());
    if (!img) throw std::runtime_error("idx: truncated image data in " + images_path);
    for (unsigned char p : pix) out.data.push_back(p / 255.0);
    char yb;
    lab.read(&yb, 1);
    if (!lab) throw std::runtime_error("idx: truncated label data in " + labels_path);
    int y = static_cast<unsigned char>(yb) + 1;
    max_label = std::max(max_label, y);
    out.labels.push_back(y);
  }
  out.classes = static_cast<size_t>(max_label);
  out.validate();
  return out;
}

// CIFAR-10 binary: 3073-byte records, one label byte (0-based) then 3072
// bytes of RGB planes.
inline LabeledDataset load_cifar_binary(const std::vector<std::string>& files) {
  constexpr size_t kRecord = 3073;
  LabeledDataset out;
  out.sample_shape = {3, 32, 32};
  int max_label = 0;
  for (const std::string& path : files) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cifar: cannot open " + path);
    size_t bytes = static_cast<size_t>(in.tellg());
    if (bytes == 0 || bytes % kRecord != 0)
      throw std::runtime_error("cifar: " + path + " size " + std::to_string(bytes) +
                               " is not a multiple of 3073");
    in.seekg(0);
    size_t records = bytes / kRecord;
    std::vector<unsigned char> rec(kRecord);
    for (size_t r = 0; r < records; ++r) {
      in.read(reinterpret_cast<char*>(rec.data()), kRecord);
      if (!in) throw std::runtime_error("cifar: truncated record in " + path);
      int y = rec[0] + 1;
      max_label = std::max(max_label, y);
      out.labels.push_back(y);
      for (size_t i = 1; i < kRecord; ++i) out.data.push_back(rec[i] / 255.0);
    }
  }
  out.classes = static_cast<size_t>(max_label);
  out.validate();
  return out;
}

inline Tensor assemble_batch(const LabeledDataset& ds, std::span<const size_t> idx) {
  Shape shape;
  shape.push_back(idx.size());
  shape.insert(shape.end(), ds.sample_shape.begin(), ds.sample_shape.end());
  Tensor t(shape);
  size_t ss = ds.sample_size();
  for (size_t i = 0; i < idx.size(); ++i) {
    auto s = ds.sample(idx[i]);
    std::copy(s.begin(), s.end(), t.data.begin() + i * ss);
  }
  return t;
}

inline std::vector<int> batch_labels(const LabeledDataset& ds, std::span<const size_t> idx) {
  std::vector<int> y(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) y[i] = ds.labels[idx[i]];
  return y;
}

}  // namespace reat
