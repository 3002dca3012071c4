#include "dpd/rng.hpp"

#include <cmath>
#include <numbers>

#include "dpd/errors.hpp"

namespace dpd {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::uniform_int(std::uint64_t bound) {
  if (bound == 0) throw ArgumentError("uniform_int: bound must be positive");
  // Reject the top partial bucket so every residue is equally likely.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % bound;
}

double Rng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(theta);
  has_spare_ = true;
  return mean + stddev * radius * std::cos(theta);
}

Rng Rng::fork(std::uint64_t salt) const {
  // splitmix64 finalizer over seed ^ salt.
  std::uint64_t z = seed_ ^ (salt + 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return Rng(z ^ (z >> 31));
}

Tensor he_normal_init(Rng& rng, Shape shape, std::size_t fan_in) {
  if (fan_in == 0) throw ArgumentError("he_normal_init: fan_in must be positive");
  Tensor t(shape);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

}  // namespace dpd
