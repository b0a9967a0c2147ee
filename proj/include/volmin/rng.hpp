#pragma once

// Seeded random streams. Every consumer owns its own engine, derived from a
// (seed, stream id) pair, so results never depend on call order elsewhere.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace volmin {

using Engine = std::mt19937_64;

// splitmix64 finalizer; spreads nearby (seed, stream) pairs apart.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream = 0) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Engine make_engine(std::uint64_t seed, std::uint64_t stream = 0) {
  return Engine(mix_seed(seed, stream));
}

// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Engine& eng) { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }

inline double uniform(Engine& eng, double lo, double hi) { return lo + (hi - lo) * uniform01(eng); }

inline double standard_normal(Engine& eng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(eng);
}

inline std::size_t uniform_index(Engine& eng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(eng) * static_cast<double>(n)) % n;
}

// Inverse-CDF draw from a discrete distribution; the last index absorbs
// rounding slack in the cumulative sum.
inline std::size_t sample_categorical(Engine& eng, std::span<const double> probs) {
  const double u = uniform01(eng);
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

inline std::vector<double> sample_dirichlet(Engine& eng, std::size_t k, double concentration) {
  std::gamma_distribution<double> g(concentration, 1.0);
  std::vector<double> v(k);
  double s = 0.0;
  do {
    s = 0.0;
    for (auto& x : v) {
      x = g(eng);
      s += x;
    }
  } while (s <= 0.0);
  for (auto& x : v) x /= s;
  return v;
}

// Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> permutation(Engine& eng, std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = uniform_index(eng, i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace volmin
