#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace evovgm {

/// Seeded noise stream. Every stochastic routine takes one of these by
/// reference so that a seed fully determines its output. Uniforms are built
/// from raw engine bits rather than std distributions, whose algorithms are
/// implementation-defined.
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed) : engine_(seed) {}

  /// Derives an independent stream for a named purpose (weights, training noise, ...).
  NoiseSource(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    engine_.seed(seq);
  }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard Gumbel draw, -log(-log u).
  double gumbel() { return -std::log(-std::log(uniform())); }

  /// Index drawn from a discrete distribution given by `probs` (need not be normalized).
  template <class Range>
  std::size_t categorical(const Range& probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    const double target = uniform() * total;
    double cumulative = 0.0;
    std::size_t index = 0;
    std::size_t last_positive = 0;
    for (double p : probs) {
      if (p > 0.0) last_positive = index;
      cumulative += p;
      if (target < cumulative) return index;
      ++index;
    }
    return last_positive;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace evovgm
