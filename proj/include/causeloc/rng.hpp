#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "causeloc/hash.hpp"

namespace causeloc {

/// Seeded random stream with a fully specified algorithm.
///
/// Engine is std::mt19937_64 (algorithm fixed by the standard). Uniform and
/// normal variates are derived here rather than through the standard
/// distributions, whose algorithms are implementation-defined. Normals use
/// the Box-Muller transform without caching the second variate.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent stream for a named entity (e.g. one image id).
  static Rng stream(std::uint64_t seed, std::string_view key) {
    return Rng(mix_seed(seed, key));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1].
  double uniform_open_low() { return 1.0 - uniform(); }

  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace causeloc
