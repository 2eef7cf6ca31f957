#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "reat/util.hpp"

namespace reat {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  return "[" + join(s, ",") + "]";
}

// Dense row-major tensor of 64-bit floats. Value semantics; immutable by
// convention once handed to a Record.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(data.size()) + " values");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = v;
    return t;
  }

  size_t numel() const { return data.size(); }
  size_t rank() const { return shape.size(); }
  size_t dim(size_t i) const { return shape.at(i); }

  // 2-D accessors (checked only by the shape contract of the caller).
  size_t rows() const { return shape[0]; }
  size_t cols() const { return shape[1]; }
  double& at(size_t r, size_t c) { return data[r * shape[1] + c]; }
  double at(size_t r, size_t c) const { return data[r * shape[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  for (size_t i = 0; i < a.data.size(); ++i)
    if (a.data[i] != b.data[i]) return false;
  return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace reat
