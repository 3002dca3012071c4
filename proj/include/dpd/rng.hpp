#pragma once

#include <cstdint>
#include <random>

#include "dpd/tensor.hpp"

namespace dpd {

// Deterministic generator: std::mt19937_64, whose raw output sequence is fixed
// by the C++ standard. Distributions are implemented here rather than taken
// from <random>, whose distribution algorithms vary between standard
// libraries. Normals use the Box-Muller transform; bounded integers use
// rejection sampling on the raw 64-bit output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();

  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_int(std::uint64_t bound);

  double normal(double mean = 0.0, double stddev = 1.0);

  bool bernoulli(double p) { return uniform() < p; }

  // Independent stream derived from this generator's seed and a salt; does
  // not advance this generator.
  Rng fork(std::uint64_t salt) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Elements i.i.d. N(0, 2 / fan_in). fan_in == 0 throws ArgumentError.
Tensor he_normal_init(Rng& rng, Shape shape, std::size_t fan_in);

}  // namespace dpd
