// License: Apache 2.0. See LICENSE file in root directory.
#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace selftof {

// Deterministic generator with explicit draw algorithms. std::shuffle and the
// std distributions are implementation-defined, so every reproducible draw in
// the project (sparsity, textures, init, data order) goes through this class.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  // splitmix64 step
  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // uniform integer in [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = n * ((~0ULL) / n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // standard normal via Box-Muller
  double normal() {
    double u1 = 0.0;
    while (u1 == 0.0) u1 = next_double();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent stream, e.g. per (epoch, sample).
  Rng fork(std::uint64_t salt) const {
    Rng r(state_ ^ (salt * 0xd6e8feb86659fd93ULL + 0xa3ec647659359acdULL));
    r.next_u64();
    return r;
  }

 private:
  std::uint64_t state_;
};

}  // namespace selftof
