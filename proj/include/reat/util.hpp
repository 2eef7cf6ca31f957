#pragma once

#include <cstdint>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace reat {

// splitmix64; used to derive independent RNG streams from (seed, salt...).
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t salt) {
  return mix64(mix64(seed) ^ mix64(salt ^ 0xa0761d6478bd642full));
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b) {
  return derive_seed(derive_seed(seed, a), b);
}

// Shortest round-trip decimal for doubles; keeps CSV/report output
// byte-stable across runs.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  for (int prec = 1; prec <= 16; ++prec) {
    char shorter[40];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    std::sscanf(shorter, "%lf", &back);
    if (back == v) return shorter;
  }
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& xs, const std::string& sep) {
  std::ostringstream os;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) os << sep;
    os << xs[i];
  }
  return os.str();
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace reat
