#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace dynlab {

// Seedable random source with distributions that are stable across platforms
// and standard-library implementations. The engine is std::mt19937_64 (fully
// specified by the C++ standard); distributions are implemented here instead
// of relying on <random>'s unspecified ones:
//   uniform: 53 random bits scaled into [0, 1)
//   normal:  inverse-CDF transform (rational approximation, |error| < 1e-9)
//   categorical: inverse-CDF walk over the probability vector
//
// Per-person substreams are derived with SplitMix64 so parallel generation
// stays reproducible regardless of scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent substream for (seed, stream); used one-per-person.
  static Rng substream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via inverse CDF.
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);

  // Index draw from a (not necessarily normalized) weight vector.
  int categorical(std::span<const double> weights);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t& state);

// Inverse standard-normal CDF, p in (0, 1).
double normal_quantile(double p);

}  // namespace dynlab
