#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "reat/util.hpp"

namespace reat {

// Deterministic random stream. mt19937_64 is fully specified by the
// standard; the uniform/gaussian mappings are hand-rolled because the
// std distributions are implementation-defined and would break the
// bitwise reproducibility contract.
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed) : engine_(seed) {}

  static RandomStream derived(uint64_t seed, uint64_t salt) {
    return RandomStream(derive_seed(seed, salt));
  }
  static RandomStream derived(uint64_t seed, uint64_t a, uint64_t b) {
    return RandomStream(derive_seed(seed, a, b));
  }

  uint64_t bits() { return engine_(); }

  // in [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one value per call, second discarded for simplicity.
  double gaussian() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  size_t index(size_t n) { return static_cast<size_t>(engine_() % n); }

  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (size_t i = xs.size(); i > 1; --i) {
      size_t j = index(i);
      std::swap(xs[i - 1], xs[j]);
    }
  }

  // FNV-1a over the serialized engine state; checkpoint metadata only.
  std::string state_digest() const {
    std::ostringstream os;
    os << engine_;
    uint64_t h = 1469598103934665603ull;
    for (char ch : os.str()) {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace reat
