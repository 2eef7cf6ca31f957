#pragma once

#include <cmath>
#include <stdexcept>

#include "reat/graph.hpp"

namespace reat {

// Central-difference gradient check. The record must already have every
// input bound except possibly `wrt`, which is (re)bound to `point`. Returns
// max over coordinates of |analytic - fd| / max(1, |analytic|).
inline double finite_diff_check(Record& rec, Var wrt, Var out, const Tensor& point,
                                double h = 1e-5) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be positive");
  if (shape_numel(rec.shape_of(out)) != 1)
    throw std::invalid_argument("finite_diff_check: function is not scalar-valued");

  rec.bind(wrt, point);
  rec.forward();
  rec.backward(out, Tensor::scalar(1.0));
  Tensor analytic = rec.grad(wrt);

  Tensor probe = point;
  double max_rel = 0.0;
  for (size_t i = 0; i < probe.numel(); ++i) {
    double orig = probe.data[i];
    probe.data[i] = orig + h;
    rec.bind(wrt, probe);
    rec.forward();
    double fp = rec.value(out).data[0];
    probe.data[i] = orig - h;
    rec.bind(wrt, probe);
    rec.forward();
    double fm = rec.value(out).data[0];
    probe.data[i] = orig;
    double fd = (fp - fm) / (2.0 * h);
    double rel = std::fabs(analytic.data[i] - fd) / std::max(1.0, std::fabs(analytic.data[i]));
    max_rel = std::max(max_rel, rel);
  }
  rec.bind(wrt, point);
  return max_rel;
}

}  // namespace reat
