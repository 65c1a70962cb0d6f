#pragma once

// Seeded randomness. Every stochastic routine takes an explicit Rng so runs
// are reproducible; independent streams come from split_seed.

#include <cstdint>
#include <random>
#include <span>

#include "retrodiff/error.hpp"

namespace retrodiff {

/// SplitMix64 finalizer applied to seed ^ index: the stream-splitting rule.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = (seed ^ index) + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::uint64_t next() { return engine_(); }

  std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  /// Inverse-CDF draw from unnormalized nonnegative weights.
  template <typename T>
  std::size_t categorical(std::span<const T> w) {
    double total = 0.0;
    for (auto x : w) total += static_cast<double>(x);
    if (!(total > 0.0)) throw NumericError("categorical draw from an all-zero distribution");
    const double u = uniform() * total;
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] <= 0) continue;
      acc += static_cast<double>(w[i]);
      last = i;
      if (u < acc) return i;
    }
    return last;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace retrodiff
