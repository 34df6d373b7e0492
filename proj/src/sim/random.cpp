#include "qelab/sim/random.hpp"

#include <cmath>

namespace qelab::sim {

std::uint64_t CounterRng::mix(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

std::uint64_t CounterRng::next_below(std::uint64_t n) {
  // 53-bit uniform scaled to the range; granularity n / 2^53 is far below
  // the picosecond resolution this is used for.
  return static_cast<std::uint64_t>(next_double() * static_cast<double>(n));
}

double CounterRng::next_exponential(double mean) {
  // 1 - u is in (0, 1], so the log never sees zero.
  return -mean * std::log(1.0 - next_double());
}

double CounterRng::next_gaussian(double sigma) {
  double u1 = 1.0 - next_double();
  double u2 = next_double();
  return sigma * std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::uint64_t CounterRng::next_poisson(double mean) {
  if (mean <= 0.0)
    return 0;
  if (mean < 30.0) {
    // Knuth inversion: count uniforms until their product drops below e^-mean.
    const double limit = std::exp(-mean);
    std::uint64_t k = 0;
    double product = next_double();
    while (product > limit) {
      ++k;
      product *= next_double();
    }
    return k;
  }
  // PTRS transformed rejection (W. Hormann, 1993), exact for mean >= 10.
  const double b = 0.931 + 2.53 * std::sqrt(mean);
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double v_r = 0.9277 - 3.6224 / (b - 2.0);
  const double log_mean = std::log(mean);
  for (;;) {
    double u = next_double() - 0.5;
    double v = next_double();
    double us = 0.5 - std::abs(u);
    double kf = std::floor((2.0 * a / us + b) * u + mean + 0.43);
    if (us >= 0.07 && v <= v_r)
      return static_cast<std::uint64_t>(kf);
    if (kf < 0.0 || (us < 0.013 && v > us))
      continue;
    double k = kf;
    double lhs = std::log(v * inv_alpha / (a / (us * us) + b));
    double rhs = -mean + k * log_mean - std::lgamma(k + 1.0);
    if (lhs <= rhs)
      return static_cast<std::uint64_t>(kf);
  }
}

} // namespace qelab::sim
