#include "dpd/analysis.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <tuple>

#include "dpd/errors.hpp"

namespace dpd {

LayerCost pwc_cost(std::uint64_t c, std::uint64_t out, std::uint64_t h, std::uint64_t w) {
  return {c * out, h * w * c * out};
}

LayerCost dwc_cost(std::uint64_t c, std::uint64_t m, std::uint64_t k, std::uint64_t h_out,
                   std::uint64_t w_out) {
  return {k * k * m * c, h_out * w_out * k * k * m * c};
}

LayerCost conv_cost(std::uint64_t c, std::uint64_t out, std::uint64_t k, std::uint64_t h_out,
                    std::uint64_t w_out) {
  return {k * k * c * out, h_out * w_out * k * k * c * out};
}

Rational Rational::make(std::uint64_t num, std::uint64_t den) {
  if (den == 0) throw ArgumentError("rational with zero denominator");
  const std::uint64_t g = std::gcd(num, den);
  return g ? Rational{num / g, den / g} : Rational{0, 1};
}

std::string Rational::str() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

bool operator<(const Rational& a, const Rational& b) {
  return static_cast<unsigned __int128>(a.num) * b.den < static_cast<unsigned __int128>(b.num) * a.den;
}

Rational expansion_ratio(std::uint64_t c, std::uint64_t k) {
  if (c == 0 || k == 0) throw ArgumentError("expansion_ratio: C and k must be positive");
  return Rational::make(c, k * k);
}

std::string CountingPolicy::describe() const {
  std::string s = "params=conv weights";
  if (conv_bias) s += "+conv bias";
  if (bn_affine) s += "+BN gamma/beta";
  if (bn_running_stats) s += "+BN running stats";
  s += "+FC weights";
  if (fc_bias) s += "+FC bias";
  s += count_flops ? "; macs=2x conv+FC multiplies (FLOPs)" : "; macs=conv+FC multiplies";
  return s;
}

namespace {

std::string shape_str(std::size_t c, std::size_t h, std::size_t w) {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

std::string format_alpha(double a) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, a);
  return std::string(buf, ptr);
}

struct Counter {
  const CountingPolicy& policy;
  CostReport& report;

  // Appends conv and BN rows; returns the output spatial size.
  std::pair<std::size_t, std::size_t> unit(const std::string& scope, const ConvLayout& u,
                                           std::size_t h, std::size_t w) {
    const std::size_t pad = u.kind == ConvKind::pointwise ? 0 : u.kernel / 2;
    if (h + 2 * pad < u.kernel || w + 2 * pad < u.kernel) {
      throw ShapeError(scope + "." + u.name + ": kernel larger than padded input");
    }
    const std::size_t ho = (h + 2 * pad - u.kernel) / u.stride + 1;
    const std::size_t wo = (w + 2 * pad - u.kernel) / u.stride + 1;
    LayerCost cost;
    switch (u.kind) {
      case ConvKind::pointwise: cost = pwc_cost(u.in_channels, u.out_channels, ho, wo); break;
      case ConvKind::depthwise: cost = dwc_cost(u.in_channels, u.multiplier, u.kernel, ho, wo); break;
      case ConvKind::standard: cost = conv_cost(u.in_channels, u.out_channels, u.kernel, ho, wo); break;
    }
    if (policy.conv_bias) cost.params += u.out_channels;
    add({scope + "." + u.name, shape_str(u.out_channels, ho, wo), cost.params, cost.macs});

    std::uint64_t bn = 0;
    if (policy.bn_affine) bn += 2 * u.out_channels;
    if (policy.bn_running_stats) bn += 2 * u.out_channels;
    add({scope + "." + u.name + "_bn", shape_str(u.out_channels, ho, wo), bn, 0});
    return {ho, wo};
  }

  void add(CostRow row) {
    if (policy.count_flops) row.macs *= 2;
    report.totals.params += row.params;
    report.totals.macs += row.macs;
    report.rows.push_back(std::move(row));
  }
};

}  // namespace

std::string network_tag(const NetworkSpec& spec) {
  return spec.name + "_a" + format_alpha(spec.alpha) + "_m" + std::to_string(spec.multiplier);
}

CostReport count_network(const NetworkSpec& spec, std::size_t input_h, std::size_t input_w,
                         const CountingPolicy& policy) {
  const std::vector<BlockSpec> blocks = expand_blocks(spec);
  CostReport report;
  report.network = network_tag(spec);
  report.policy = policy;
  Counter counter{policy, report};

  const ConvLayout stem{"conv", ConvKind::standard, 3, spec.stem.out_channels, 1,
                        spec.stem.kernel, spec.stem.stride, true};
  auto [h, w] = counter.unit("stem", stem, input_h, input_w);

  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const BlockLayout layout = block_layout(blocks[i]);
    const std::size_t bh = h;
    const std::size_t bw = w;
    for (const ConvLayout& u : layout.units) std::tie(h, w) = counter.unit(block_scope(i), u, h, w);
    if (layout.projection) (void)counter.unit(block_scope(i), *layout.projection, bh, bw);
  }
  std::size_t width = blocks.back().out_channels;
  if (spec.head.final_pwc) {
    const std::size_t head_width = scale_channels(spec.head.final_pwc, spec.alpha);
    const ConvLayout head{"pwc", ConvKind::pointwise, width, head_width, 1, 1, 1, true};
    std::tie(h, w) = counter.unit("head", head, h, w);
    width = head_width;
  }
  if (spec.head.pool_window && (h != spec.head.pool_window || w != spec.head.pool_window)) {
    throw ShapeError(spec.name + ": pre-pool map is " + std::to_string(h) + "x" + std::to_string(w) +
                     ", pooling window is " + std::to_string(spec.head.pool_window));
  }
  const std::uint64_t fc_params = width * spec.num_classes + (policy.fc_bias ? spec.num_classes : 0);
  counter.add({"fc", shape_str(spec.num_classes, 1, 1), fc_params, width * spec.num_classes});
  return report;
}

std::string CostReport::to_csv() const {
  std::ostringstream out;
  out << "layer,out_shape,params,macs\n";
  for (const CostRow& r : rows) out << r.layer << "," << r.out_shape << "," << r.params << "," << r.macs << "\n";
  out << "total,," << totals.params << "," << totals.macs << "\n";
  return out.str();
}

std::string CostReport::to_text() const {
  std::ostringstream out;
  char line[160];
  out << network << "  (" << policy.describe() << ")\n";
  std::snprintf(line, sizeof line, "%-22s %-14s %12s %14s\n", "layer", "output", "params", "macs");
  out << line;
  for (const CostRow& r : rows) {
    std::snprintf(line, sizeof line, "%-22s %-14s %12llu %14llu\n", r.layer.c_str(), r.out_shape.c_str(),
                  static_cast<unsigned long long>(r.params), static_cast<unsigned long long>(r.macs));
    out << line;
  }
  std::snprintf(line, sizeof line, "%-22s %-14s %12llu %14llu\n", "total", "",
                static_cast<unsigned long long>(totals.params), static_cast<unsigned long long>(totals.macs));
  out << line;
  std::snprintf(line, sizeof line, "total: %.2f M params, %.1f M MACs\n", round_to(params_millions(), 2),
                round_to(macs_millions(), 1));
  out << line;
  return out.str();
}

double round_to(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

Comparison compare_networks(std::span<const CostReport> reports) {
  Comparison cmp;
  const bool ratios = reports.size() > 1;
  auto ratio = [](std::uint64_t a, std::uint64_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  char buf[64];

  std::ostringstream csv;
  csv << "network,params,macs";
  if (ratios) {
    for (const CostReport& r : reports) csv << ",params/" << r.network << ",macs/" << r.network;
  }
  csv << "\n";
  for (const CostReport& a : reports) {
    csv << a.network << "," << a.totals.params << "," << a.totals.macs;
    if (ratios) {
      for (const CostReport& b : reports) {
        std::snprintf(buf, sizeof buf, ",%.6f,%.6f", ratio(a.totals.params, b.totals.params),
                      ratio(a.totals.macs, b.totals.macs));
        csv << buf;
      }
    }
    csv << "\n";
  }
  cmp.csv = csv.str();

  std::ostringstream text;
  char line[256];
  std::snprintf(line, sizeof line, "%-34s %10s %10s\n", "network", "params(M)", "MACs(M)");
  text << line;
  for (const CostReport& r : reports) {
    std::snprintf(line, sizeof line, "%-34s %10.3f %10.2f\n", r.network.c_str(), r.params_millions(),
                  r.macs_millions());
    text << line;
  }
  if (ratios) {
    text << "\npairwise ratios (row / column, params | macs)\n";
    for (const CostReport& a : reports) {
      for (const CostReport& b : reports) {
        if (&a == &b) continue;
        std::snprintf(line, sizeof line, "  %s / %s: %.4f | %.4f\n", a.network.c_str(), b.network.c_str(),
                      ratio(a.totals.params, b.totals.params), ratio(a.totals.macs, b.totals.macs));
        text << line;
      }
    }
  }
  cmp.text = text.str();
  return cmp;
}

}  // namespace dpd
