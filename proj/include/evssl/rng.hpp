#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "evssl/errors.hpp"

namespace evssl {

/// splitmix64 finalizer. Used for seed derivation so that every per-sample /
/// per-epoch random source is a pure function of (base seed, indices).
inline std::uint64_t splitmix_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Derives a child seed from a base seed and up to two stream indices.
/// The derivation is: mix(base + gamma*(a+1)), then mix(prev + gamma*(b+1)),
/// with gamma the splitmix64 increment. Documented because reproducibility
/// of every run depends on it.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  constexpr std::uint64_t gamma = 0x9e3779b97f4a7c15ull;
  std::uint64_t s = splitmix_mix(base + gamma * (a + 1));
  return splitmix_mix(s + gamma * (b + 1));
}

/// Deterministic random source. The engine is std::mt19937_64 (bit-exact
/// across platforms per the standard); all distributions are implemented
/// here rather than with std:: distributions, which are not portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t u64() { return engine_(); }

  /// Uniform double in [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Unbiased via rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    require(n > 0, Errc::domain_error, "uniform_int: empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = u64();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (two uniforms consumed, cosine branch).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Poisson draw, exact distribution. Knuth's product method per chunk;
  /// large lambda is split into chunks of <= 500 (Poisson additivity) to
  /// avoid exp underflow.
  std::uint64_t poisson(double lambda) {
    require(lambda >= 0.0 && std::isfinite(lambda), Errc::domain_error, "poisson: bad lambda");
    std::uint64_t total = 0;
    while (lambda > 0.0) {
      const double chunk = lambda > 500.0 ? 500.0 : lambda;
      lambda -= chunk;
      const double threshold = std::exp(-chunk);
      double p = 1.0;
      std::uint64_t k = 0;
      do {
        ++k;
        p *= uniform();
      } while (p > threshold);
      total += k - 1;
    }
    return total;
  }

  /// Child source whose seed is drawn from this one.
  Rng split() { return Rng(splitmix_mix(u64())); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace evssl
