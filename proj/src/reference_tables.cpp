#include "dpd/reference_tables.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <tuple>

namespace dpd {

double ReferenceCell::tolerance() const {
  return unit_slack * std::pow(10.0, -decimals) + rel_slack * value;
}

std::string ReferenceCell::label() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s %s alpha=%.2f m=%zu %s", table.c_str(), network.c_str(), alpha,
                multiplier, metric == Metric::params ? "params" : "macs");
  return buf;
}

namespace {

struct Row {
  const char* network;
  double alpha;
  std::size_t m;
  double params;
  int params_decimals;
  double macs;
  int macs_decimals;
};

// Reference #Params / FLOPs values, CIFAR-10 heads, values in millions.
constexpr Row kBottleneck[] = {
    {"resnet50_cifar", 1.0, 1, 2.0, 1, 316, 0},
    {"psdnet50_cifar", 1.0, 1, 1.6, 1, 208, 0},
};

constexpr Row kMultiplierSweep[] = {
    {"dpdnet_cifar", 1.0, 1, 0.04, 2, 5.3, 1},   {"mbv2_20_cifar", 1.0, 1, 0.05, 2, 8.3, 1},
    {"dpdnet_cifar", 1.0, 2, 0.06, 2, 8.9, 1},   {"mbv2_20_cifar", 1.0, 2, 0.09, 2, 15.8, 1},
    {"dpdnet_cifar", 1.0, 3, 0.09, 2, 12.6, 1},  {"mbv2_20_cifar", 1.0, 3, 0.14, 2, 23.3, 1},
    {"dpdnet_cifar", 1.0, 4, 0.12, 2, 16.3, 1},  {"mbv2_20_cifar", 1.0, 4, 0.18, 2, 30.8, 1},
    {"dpdnet_cifar", 1.0, 5, 0.15, 2, 20.0, 1},  {"mbv2_20_cifar", 1.0, 5, 0.23, 2, 38.2, 1},
    {"dpdnet_cifar", 1.0, 6, 0.17, 2, 23.7, 1},  {"mbv2_20_cifar", 1.0, 6, 0.27, 2, 45.7, 1},
};

constexpr Row kWidthSweep[] = {
    {"dpdnet_cifar", 1.25, 5, 0.22, 2, 28.3, 1}, {"mbv2_20_cifar", 1.25, 5, 0.34, 2, 54.1, 1},
    {"dpdnet_cifar", 1.5, 5, 0.31, 2, 38.1, 1},  {"mbv2_20_cifar", 1.5, 5, 0.49, 2, 73.2, 1},
    {"dpdnet_cifar", 1.75, 5, 0.42, 2, 49.5, 1}, {"mbv2_20_cifar", 1.75, 5, 0.65, 2, 95.6, 1},
    {"dpdnet_cifar", 2.0, 5, 0.54, 2, 62.5, 1},  {"mbv2_20_cifar", 2.0, 5, 0.85, 2, 121, 0},
    {"dpdnet_cifar", 2.5, 5, 0.83, 2, 93.1, 1},  {"mbv2_20_cifar", 2.5, 5, 1.30, 2, 182, 0},
    {"dpdnet_cifar", 3.0, 5, 1.18, 2, 130, 0},   {"mbv2_20_cifar", 3.0, 5, 1.86, 2, 257, 0},
    {"dpdnet_cifar", 4.0, 5, 2.07, 2, 222, 0},   {"mbv2_20_cifar", 4.0, 5, 3.28, 2, 444, 0},
};

template <std::size_t N>
void append(std::vector<ReferenceCell>& cells, const char* table, const Row (&rows)[N], double unit_slack,
            double rel_slack) {
  for (const Row& r : rows) {
    cells.push_back({table, r.network, r.alpha, r.m, Metric::params, r.params, r.params_decimals, unit_slack,
                     rel_slack});
    cells.push_back(
        {table, r.network, r.alpha, r.m, Metric::macs, r.macs, r.macs_decimals, unit_slack, rel_slack});
  }
}

}  // namespace

const std::vector<ReferenceCell>& reference_cells() {
  static const std::vector<ReferenceCell> cells = [] {
    std::vector<ReferenceCell> c;
    append(c, "bottleneck", kBottleneck, 0.0, 0.10);
    append(c, "multiplier_sweep", kMultiplierSweep, 1.0, 0.05);
    append(c, "width_sweep", kWidthSweep, 1.0, 0.05);
    return c;
  }();
  return cells;
}

std::vector<CellCheck> verify_reference_tables(const CountingPolicy& policy) {
  std::map<std::tuple<std::string, double, std::size_t>, CostReport> cache;
  std::vector<CellCheck> checks;
  for (const ReferenceCell& cell : reference_cells()) {
    const auto key = std::make_tuple(cell.network, cell.alpha, cell.multiplier);
    auto it = cache.find(key);
    if (it == cache.end()) {
      it = cache.emplace(key, count_network(builtin_spec(cell.network, cell.alpha, cell.multiplier, 10), policy))
               .first;
    }
    const double computed =
        cell.metric == Metric::params ? it->second.params_millions() : it->second.macs_millions();
    checks.push_back({cell, computed, std::abs(computed - cell.value) <= cell.tolerance()});
  }
  return checks;
}

}  // namespace dpd
