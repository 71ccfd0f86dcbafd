#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "tvrl/core/error.hpp"

namespace tvrl {

/// FNV-1a 64-bit hash. Used for seed derivation, parameter-name seeding and
/// config hashes. Stable across platforms.
inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a64(const void* data, size_t n) {
  return fnv1a64(std::string_view(static_cast<const char*>(data), n));
}

namespace detail {
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Deterministic random generator (splitmix64 core). All randomness in the
/// library flows through this type so that identical seeds give identical
/// results on every platform, independent of the C++ standard library's
/// distribution implementations.
///
/// `derive` builds a child generator from the current state and a tag without
/// advancing the parent; the seed hierarchy (run seed -> epoch -> step ->
/// item) is documented where used.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ^ 0x6a09e667f3bcc909ull) {
    // one warm-up step so small seeds decorrelate
    detail::splitmix64(state_);
  }

  uint64_t next_u64() { return detail::splitmix64(state_); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw contract_error("Rng::uniform_int: n must be positive");
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (cosine branch only, so each call
  /// consumes exactly two uniforms and carries no hidden state).
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  /// Exponential with the given mean.
  double exponential(double mean) {
    double u = 1.0 - uniform();
    return -mean * std::log(u);
  }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(i + 1)]);
    return p;
  }

  /// k distinct values from 0..n-1, in increasing order.
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k > n) throw contract_error("sample_without_replacement: k > n");
    std::vector<int> p = permutation(n);
    p.resize(k);
    std::sort(p.begin(), p.end());
    return p;
  }

  /// Child generator keyed by up to three integers. Does not advance *this.
  Rng derive(uint64_t a, uint64_t b = 0, uint64_t c = 0) const {
    uint64_t h = state_;
    for (uint64_t v : {a, b, c}) {
      h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
      uint64_t tmp = h;
      h = detail::splitmix64(tmp);
    }
    return Rng(h);
  }

  Rng derive(std::string_view tag, uint64_t a = 0, uint64_t b = 0) const {
    return derive(fnv1a64(tag), a, b);
  }

 private:
  uint64_t state_;
};

}  // namespace tvrl
