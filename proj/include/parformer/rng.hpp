#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace parformer {

// Hand-rolled draws on top of mt19937_64 so streams are identical on every
// platform (std::normal_distribution is implementation-defined).

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
}

inline double normal01(std::mt19937_64& rng) {
  // Box-Muller, cosine branch. u1 in (0, 1].
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

/// Normal(0, std^2) clipped by rejection to +-2 std.
inline double trunc_normal(std::mt19937_64& rng, double stddev) {
  double z = normal01(rng);
  while (z < -2.0 || z > 2.0) z = normal01(rng);
  return z * stddev;
}

/// Stream-splitting hash (splitmix64 over the mixed key).
inline uint64_t mix_seed(uint64_t seed, uint64_t stream, uint64_t index) {
  uint64_t x = seed ^ (stream * 0x9e3779b97f4a7c15ULL) ^ (index * 0xbf58476d1ce4e5b9ULL);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace parformer
