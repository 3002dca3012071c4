#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dpd {

// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

struct GradcheckResult {
  std::string name;
  std::size_t entries = 0;   // coordinates compared
  std::size_t skipped = 0;   // coordinates whose +-h probe straddles a ReLU kink
  double max_rel_error = 0.0;
  bool pass = false;
  // Entries over tolerance whose |a - n| is within the rounding bound of the
  // central difference, 4 * eps * max(|f(x+h)|, |f(x-h)|) / h, and the
  // largest |a - n| / bound among all entries over tolerance.
  std::size_t noise_limited = 0;
  double max_noise_ratio = 0.0;

  bool within_rounding() const { return entries > 0 && (pass || max_noise_ratio <= 1.0); }
};

// Central differences with step `h` against the analytic backward pass of
// every op and every block kind at toy sizes. Losses are fixed random
// weightings of the outputs (softmax cross-entropy for the loss op and the
// network). A coordinate is skipped only when its forward and backward
// one-sided differences disagree the way a crossed ReLU kink makes them.
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed, double tolerance = 1e-5,
                                                 double h = 1e-5);

}  // namespace dpd
