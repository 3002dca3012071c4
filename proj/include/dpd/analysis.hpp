#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpd/network.hpp"

namespace dpd {

struct LayerCost {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;

  friend bool operator==(const LayerCost&, const LayerCost&) = default;
};

// 1x1 convolution C -> out on an H x W output map: C*out weights,
// H*W*C*out multiply-accumulates.
LayerCost pwc_cost(std::uint64_t c, std::uint64_t out, std::uint64_t h, std::uint64_t w);

// k x k depthwise convolution with channel multiplier m on an H_out x W_out
// output map: k*k*m*C weights, H_out*W_out*k*k*m*C MACs.
LayerCost dwc_cost(std::uint64_t c, std::uint64_t m, std::uint64_t k, std::uint64_t h_out,
                   std::uint64_t w_out);

// k x k standard convolution.
LayerCost conv_cost(std::uint64_t c, std::uint64_t out, std::uint64_t k, std::uint64_t h_out,
                    std::uint64_t w_out);

// Exact non-negative fraction in lowest terms.
struct Rational {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  static Rational make(std::uint64_t num, std::uint64_t den);
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const;

  friend bool operator==(const Rational&, const Rational&) = default;
  friend bool operator<(const Rational& a, const Rational& b);
};

// PWC/DWC cost ratio for channel expansion from C channels with a k x k
// depthwise kernel: C / k^2, identical for parameters and MACs.
Rational expansion_ratio(std::uint64_t c, std::uint64_t k);

// True when the ratio is below 1, i.e. PWC is the cheaper expansion.
inline bool pwc_cheaper(const Rational& r) { return r.num < r.den; }

/// What a cost report counts. The default matches the reference cost tables:
/// conv weights, BN gamma/beta, FC weights and bias; MACs of conv and FC
/// layers only.
struct CountingPolicy {
  bool bn_affine = true;
  bool bn_running_stats = false;
  bool conv_bias = false;
  bool fc_bias = true;
  // Report multiply and add as two operations (FLOPs) instead of one MAC.
  bool count_flops = false;

  std::string describe() const;
};

struct CostRow {
  std::string layer;
  std::string out_shape;  // CxHxW
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

struct CostReport {
  std::string network;  // name plus alpha/m tag
  std::vector<CostRow> rows;
  LayerCost totals;
  CountingPolicy policy;

  double params_millions() const { return static_cast<double>(totals.params) / 1e6; }
  double macs_millions() const { return static_cast<double>(totals.macs) / 1e6; }

  // Header `layer,out_shape,params,macs`, one row per layer, totals row last.
  std::string to_csv() const;
  std::string to_text() const;
};

// Symbolic traversal of the network; allocates no tensors.
CostReport count_network(const NetworkSpec& spec, std::size_t input_h, std::size_t input_w,
                         const CountingPolicy& policy = {});
inline CostReport count_network(const NetworkSpec& spec, const CountingPolicy& policy = {}) {
  return count_network(spec, spec.input_size, spec.input_size, policy);
}

std::string network_tag(const NetworkSpec& spec);

struct Comparison {
  std::string text;
  std::string csv;
};

// One row per report; with two or more reports, ratio columns
// params/<other> and macs/<other> for every report.
Comparison compare_networks(std::span<const CostReport> reports);

// Round to `decimals` places, half away from zero.
double round_to(double value, int decimals);

}  // namespace dpd
