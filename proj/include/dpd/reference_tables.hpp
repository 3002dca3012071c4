#pragma once

#include <string>
#include <vector>

#include "dpd/analysis.hpp"

namespace dpd {

enum class Metric { params, macs };

// One reference #Params or FLOPs cell, in millions, with the number of
// decimals it was printed with.
struct ReferenceCell {
  std::string table;
  std::string network;  // builtin name
  double alpha = 1.0;
  std::size_t multiplier = 1;
  Metric metric = Metric::params;
  double value = 0.0;
  int decimals = 0;
  // Allowed deviation: unit_slack * 10^-decimals + rel_slack * value.
  double unit_slack = 1.0;
  double rel_slack = 0.05;

  double tolerance() const;
  std::string label() const;
};

const std::vector<ReferenceCell>& reference_cells();

struct CellCheck {
  ReferenceCell cell;
  double computed = 0.0;  // millions
  bool pass = false;
};

std::vector<CellCheck> verify_reference_tables(const CountingPolicy& policy = {});

}  // namespace dpd
