#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

// Deterministic randomness helpers. Everything here is fully specified by the
// C++ standard (mt19937_64 output) or written out explicitly, so streams are
// bit-identical across platforms and standard-library implementations.

namespace pspo {

// SplitMix64 finalizer; good avalanche, used for seed derivation.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive a child seed from a parent seed and up to two stream labels.
// Chained mixing keeps distinct (seed, a, b) triples statistically independent.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ splitmix64(a + 0x9e3779b97f4a7c15ULL));
  h = splitmix64(h ^ splitmix64(b + 0x3c6ef372fe94f82aULL));
  return h;
}

// Uniform double in [0, 1) with 53 random bits. Avoids
// std::uniform_real_distribution, whose output is implementation-defined.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Inverse-CDF draw from a categorical distribution. probs must be
// nonnegative; they are treated as already normalized.
inline int sample_categorical(std::span<const double> probs,
                              std::mt19937_64& rng) {
  if (probs.empty()) throw std::invalid_argument("sample_categorical: empty");
  const double u = uniform01(rng);
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);  // guards rounding shortfall
}

// Uniform integer in [0, n) via the 53-bit uniform; deterministic everywhere.
inline std::size_t uniform_index(std::size_t n, std::mt19937_64& rng) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  auto idx = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
  return idx >= n ? n - 1 : idx;
}

}  // namespace pspo
