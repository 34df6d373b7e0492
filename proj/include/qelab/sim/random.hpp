#pragma once

#include <cstdint>

namespace qelab::sim {

/// Counter-based random generator. Output i is the splitmix64 finalizer
/// applied to seed + i * golden gamma, so a stream is a pure function of
/// (seed, counter) and can be reproduced or resumed from any index.
///
/// Constants are the reference splitmix64 constants (Steele/Lea/Flood):
///   gamma = 0x9E3779B97F4A7C15
///   mix   = xorshift 30, * 0xBF58476D1CE4E5B9, xorshift 27,
///           * 0x94D049BB133111EB, xorshift 31
class CounterRng {
public:
  static constexpr const char *kGeneratorName = "splitmix64";

  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64() {
    return mix(seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in [0, 1), 53 significant bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  bool next_bernoulli(double p) { return next_double() < p; }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n);

  /// Exponential with the given mean (inverse CDF).
  double next_exponential(double mean);

  /// Zero-mean Gaussian (Box-Muller, consumes two outputs per call).
  double next_gaussian(double sigma);

  /// Poisson-distributed count. Inversion by sequential search for small
  /// means, Hormann's PTRS transformed rejection for large ones.
  std::uint64_t next_poisson(double mean);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  /// The splitmix64 finalizer; also handy for deriving sub-seeds.
  static std::uint64_t mix(std::uint64_t z);

private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

} // namespace qelab::sim
