#include "dpd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>

#include "dpd/blocks.hpp"
#include "dpd/network.hpp"
#include "dpd/ops.hpp"

namespace dpd {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct Probe {
  std::span<double> values;
  std::vector<double> analytic;
};

class Checker {
 public:
  Checker(double tolerance, double h) : tolerance_(tolerance), h_(h) {}

  GradcheckResult run(const std::string& name, const std::function<double()>& loss, std::vector<Probe> probes) const {
    GradcheckResult res;
    res.name = name;
    const double f0 = loss();
    for (Probe& p : probes) {
      for (std::size_t i = 0; i < p.values.size(); ++i) {
        const double saved = p.values[i];
        p.values[i] = saved + h_;
        const double fp = loss();
        p.values[i] = saved - h_;
        const double fm = loss();
        p.values[i] = saved;
        const double numeric = (fp - fm) / (2.0 * h_);
        const double err = relative_error(p.analytic[i], numeric);
        if (err > tolerance_ && crosses_kink(fp, f0, fm)) {
          ++res.skipped;
          continue;
        }
        ++res.entries;
        res.max_rel_error = std::max(res.max_rel_error, err);
        if (err > tolerance_) {
          const double bound = 4.0 * std::numeric_limits<double>::epsilon() *
                               std::max(std::abs(fp), std::abs(fm)) / h_;
          const double ratio = std::abs(p.analytic[i] - numeric) / bound;
          if (ratio <= 1.0) ++res.noise_limited;
          res.max_noise_ratio = std::max(res.max_noise_ratio, ratio);
        }
      }
    }
    res.pass = res.entries > 0 && res.max_rel_error <= tolerance_;
    return res;
  }

 private:
  // On a smooth loss the two one-sided slopes differ by O(h * f''); a ReLU
  // switching inside [x - h, x + h] makes them differ by O(1).
  bool crosses_kink(double fp, double f0, double fm) const {
    const double fwd = (fp - f0) / h_;
    const double bwd = (f0 - fm) / h_;
    return std::abs(fwd - bwd) > 1e-3 * std::max({std::abs(fwd), std::abs(bwd), 1e-6});
  }

  double tolerance_;
  double h_;
};

Tensor random_tensor(Rng& rng, Shape s) {
  Tensor t(s);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

GradcheckResult check_conv(const Checker& chk, Rng& rng, const std::string& name, ConvParams p, Shape in) {
  he_init(p, rng);
  Tensor x = random_tensor(rng, in);
  const Tensor r = random_tensor(rng, p.output_shape(in));
  const ConvGrads g = conv2d_backward(x, p, r);
  auto loss = [&] { return weighted_sum(conv2d_forward(x, p), r); };
  return chk.run(name, loss, {{x.data(), to_vec(g.grad_x)}, {p.weights.data(), to_vec(g.grad_w)}});
}

GradcheckResult check_batch_norm(const Checker& chk, Rng& rng) {
  const Shape in{3, 2, 3, 3};
  BatchNormParams bn(2);
  for (std::size_t c = 0; c < 2; ++c) {
    bn.gamma[c] = 1.0 + 0.5 * rng.normal();
    bn.beta[c] = 0.5 * rng.normal();
  }
  Tensor x = random_tensor(rng, in);
  const Tensor r = random_tensor(rng, in);
  BatchNormCache cache;
  (void)batch_norm_forward(x, bn, true, &cache);
  const BatchNormGrads g = batch_norm_backward(cache, bn, r);
  auto loss = [&] { return weighted_sum(batch_norm_forward(x, bn, true), r); };
  return chk.run("batchnorm(train)", loss,
                 {{x.data(), to_vec(g.grad_x)}, {bn.gamma, g.grad_gamma}, {bn.beta, g.grad_beta}});
}

GradcheckResult check_batch_norm_inference(const Checker& chk, Rng& rng) {
  const Shape in{2, 2, 3, 3};
  BatchNormParams bn(2);
  for (std::size_t c = 0; c < 2; ++c) {
    bn.gamma[c] = 1.0 + 0.5 * rng.normal();
    bn.beta[c] = 0.5 * rng.normal();
    bn.running_mean[c] = 0.3 * rng.normal();
    bn.running_var[c] = 0.5 + rng.uniform();
  }
  Tensor x = random_tensor(rng, in);
  const Tensor r = random_tensor(rng, in);
  BatchNormCache cache;
  (void)batch_norm_forward(x, bn, false, &cache);
  const BatchNormGrads g = batch_norm_backward(cache, bn, r);
  auto loss = [&] { return weighted_sum(batch_norm_forward(x, bn, false), r); };
  return chk.run("batchnorm(eval)", loss,
                 {{x.data(), to_vec(g.grad_x)}, {bn.gamma, g.grad_gamma}, {bn.beta, g.grad_beta}});
}

GradcheckResult check_relu(const Checker& chk, Rng& rng) {
  const Shape in{2, 3, 3, 3};
  Tensor x = random_tensor(rng, in);
  const Tensor r = random_tensor(rng, in);
  const Tensor g = relu_backward(x, r);
  auto loss = [&] { return weighted_sum(relu(x), r); };
  return chk.run("relu", loss, {{x.data(), to_vec(g)}});
}

GradcheckResult check_pool(const Checker& chk, Rng& rng) {
  const Shape in{2, 3, 4, 4};
  Tensor x = random_tensor(rng, in);
  const Tensor r = random_tensor(rng, {2, 3, 1, 1});
  const Tensor g = global_avg_pool_backward(in, r);
  auto loss = [&] { return weighted_sum(global_avg_pool(x), r); };
  return chk.run("global_avg_pool", loss, {{x.data(), to_vec(g)}});
}

GradcheckResult check_fc(const Checker& chk, Rng& rng) {
  FullyConnectedParams fc(6, 4);
  he_init(fc, rng);
  for (double& b : fc.bias) b = 0.1 * rng.normal();
  Tensor x = random_tensor(rng, {3, 6, 1, 1});
  const Tensor r = random_tensor(rng, {3, 4, 1, 1});
  const FullyConnectedGrads g = fully_connected_backward(x, fc, r);
  auto loss = [&] { return weighted_sum(fully_connected(x, fc), r); };
  return chk.run("fully_connected", loss,
                 {{x.data(), to_vec(g.grad_x)}, {fc.weights.data(), to_vec(g.grad_w)}, {fc.bias, g.grad_b}});
}

GradcheckResult check_softmax_ce(const Checker& chk, Rng& rng) {
  Tensor logits = random_tensor(rng, {4, 5, 1, 1});
  const std::vector<int> labels = {0, 3, 4, 1};
  const LossResult lr = softmax_cross_entropy(logits, labels);
  auto loss = [&] { return softmax_cross_entropy(logits, labels).loss; };
  return chk.run("softmax_cross_entropy", loss, {{logits.data(), to_vec(lr.grad)}});
}

GradcheckResult check_block(const Checker& chk, Rng& rng, const std::string& name, const BlockSpec& spec,
                            Shape in) {
  Block block(spec, rng);
  std::vector<ParamRef> params;
  std::vector<BufferRef> buffers;
  block.collect("b", params, buffers);
  // Non-trivial affine parameters so BN gradients are exercised.
  for (ParamRef& p : params) {
    if (p.role == "gamma") for (double& v : p.value) v = 1.0 + 0.3 * rng.normal();
    if (p.role == "beta") for (double& v : p.value) v = 0.3 * rng.normal();
  }
  Tensor x = random_tensor(rng, in);
  const Tensor r = random_tensor(rng, block.output_shape(in));
  block.zero_grad();
  (void)block.forward(x, true);
  const Tensor gx = block.backward(r);
  std::vector<Probe> probes{{x.data(), to_vec(gx)}};
  for (ParamRef& p : params) probes.push_back({p.value, {p.grad.begin(), p.grad.end()}});
  auto loss = [&] { return weighted_sum(block.forward(x, true), r); };
  return chk.run(name, loss, std::move(probes));
}

GradcheckResult check_network(const Checker& chk, Rng& rng) {
  NetworkSpec spec;
  spec.name = "toy";
  spec.input_size = 6;
  spec.stem = {3, 3, 1};
  spec.stages = {{BlockKind::dpd, 4, 0, 2, 1}};
  spec.head = {0, 3};
  spec.multiplier = 2;
  spec.num_classes = 3;
  Network net(spec, rng);
  he_init(net.classifier(), rng);
  std::vector<ParamRef> params = net.parameters();
  Tensor x = random_tensor(rng, {2, 3, 6, 6});
  const std::vector<int> labels = {2, 0};
  net.zero_grad();
  const LossResult lr = softmax_cross_entropy(net.forward(x, true), labels);
  const Tensor gx = net.backward(lr.grad);
  std::vector<Probe> probes{{x.data(), to_vec(gx)}};
  for (ParamRef& p : params) probes.push_back({p.value, {p.grad.begin(), p.grad.end()}});
  auto loss = [&] { return softmax_cross_entropy(net.forward(x, true), labels).loss; };
  return chk.run("network(dpd toy)", loss, std::move(probes));
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed, double tolerance, double h) {
  const Checker chk(tolerance, h);
  Rng root(seed);
  std::uint64_t salt = 0;
  auto next = [&] { return root.fork(++salt); };
  std::vector<GradcheckResult> out;

  {
    Rng rng = next();
    out.push_back(check_conv(chk, rng, "conv3x3 s1", standard_conv(2, 3, 3, 1), {2, 2, 5, 5}));
  }
  {
    Rng rng = next();
    out.push_back(check_conv(chk, rng, "conv3x3 s2", standard_conv(2, 3, 3, 2), {2, 2, 5, 5}));
  }
  {
    Rng rng = next();
    out.push_back(check_conv(chk, rng, "pwc s1", pointwise_conv(3, 4, 1), {2, 3, 4, 4}));
  }
  {
    Rng rng = next();
    out.push_back(check_conv(chk, rng, "pwc s2", pointwise_conv(3, 4, 2), {2, 3, 5, 5}));
  }
  {
    Rng rng = next();
    out.push_back(check_conv(chk, rng, "dwc3x3 m1 s1", depthwise_conv(3, 1, 3, 1), {2, 3, 5, 5}));
  }
  {
    Rng rng = next();
    out.push_back(check_conv(chk, rng, "dwc3x3 m3 s2", depthwise_conv(2, 3, 3, 2), {2, 2, 5, 5}));
  }
  {
    Rng rng = next();
    out.push_back(check_batch_norm(chk, rng));
  }
  {
    Rng rng = next();
    out.push_back(check_batch_norm_inference(chk, rng));
  }
  {
    Rng rng = next();
    out.push_back(check_relu(chk, rng));
  }
  {
    Rng rng = next();
    out.push_back(check_pool(chk, rng));
  }
  {
    Rng rng = next();
    out.push_back(check_fc(chk, rng));
  }
  {
    Rng rng = next();
    out.push_back(check_softmax_ce(chk, rng));
  }

  struct BlockCase {
    const char* name;
    BlockSpec spec;
    Shape input;
  };
  const BlockCase blocks[] = {
      {"block resnet identity", {BlockKind::resnet_bottleneck, 4, 4, 1, 1, 2}, {2, 4, 4, 4}},
      {"block resnet projection", {BlockKind::resnet_bottleneck, 3, 4, 2, 1, 2}, {2, 3, 5, 5}},
      {"block psd identity", {BlockKind::psd, 4, 4, 1, 1, 2}, {2, 4, 4, 4}},
      {"block psd projection", {BlockKind::psd, 3, 4, 2, 1, 2}, {2, 3, 5, 5}},
      {"block mbv2 identity", {BlockKind::mbv2_inverted, 3, 3, 1, 2, 0}, {2, 3, 4, 4}},
      {"block mbv2 s2", {BlockKind::mbv2_inverted, 2, 3, 2, 3, 0}, {2, 2, 5, 5}},
      {"block dpd identity", {BlockKind::dpd, 3, 3, 1, 2, 0}, {2, 3, 4, 4}},
      {"block dpd s2", {BlockKind::dpd, 2, 4, 2, 3, 0}, {2, 2, 5, 5}},
  };
  for (const BlockCase& bc : blocks) {
    Rng rng = next();
    out.push_back(check_block(chk, rng, bc.name, bc.spec, bc.input));
  }
  {
    Rng rng = next();
    out.push_back(check_network(chk, rng));
  }
  return out;
}

}  // namespace dpd
