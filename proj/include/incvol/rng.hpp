#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace incvol {

// SplitMix64 finalizer. Used to derive independent substreams from one
// 64-bit master seed by folding in integer tags (chain index, iteration,
// individual index, ...). Parallel schedules therefore cannot change the
// stream any worker sees.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = mix64(seed);
  for (std::uint64_t t : tags) s = mix64(s ^ mix64(t));
  return s;
}

inline std::mt19937_64 make_rng(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> tags = {}) {
  return std::mt19937_64(derive_seed(seed, tags));
}

// Inverse-Gamma(shape, scale) draw; mean = scale / (shape - 1) for shape > 1.
inline double draw_inverse_gamma(double shape, double scale,
                                 std::mt19937_64& rng) {
  std::gamma_distribution<double> g(shape, 1.0);
  double x = g(rng);
  while (x <= 0.0) x = g(rng);
  return scale / x;
}

}  // namespace incvol
