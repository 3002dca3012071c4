#include "dpd/blocks.hpp"

#include <algorithm>
#include <string>

#include "dpd/errors.hpp"

namespace dpd {

const char* to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::resnet_bottleneck: return "resnet_bottleneck";
    case BlockKind::psd: return "psd";
    case BlockKind::mbv2_inverted: return "mbv2_inverted";
    case BlockKind::dpd: return "dpd";
  }
  return "?";
}

BlockKind block_kind_from_string(const std::string& name) {
  for (BlockKind k : {BlockKind::resnet_bottleneck, BlockKind::psd, BlockKind::mbv2_inverted,
                      BlockKind::dpd}) {
    if (name == to_string(k)) return k;
  }
  throw SpecError("unknown block kind '" + name + "'");
}

void BlockSpec::validate() const {
  const std::string what = std::string(to_string(kind)) + " block: ";
  if (in_channels == 0 || out_channels == 0) throw SpecError(what + "channel counts must be positive");
  if (stride != 1 && stride != 2) throw SpecError(what + "stride must be 1 or 2");
  switch (kind) {
    case BlockKind::resnet_bottleneck:
      if (mid_channels == 0) throw SpecError(what + "mid_channels must be positive");
      break;
    case BlockKind::psd:
      if (mid_channels == 0) throw SpecError(what + "mid_channels must be positive");
      if (out_channels % mid_channels != 0) {
        throw SpecError(what + "out_channels " + std::to_string(out_channels) +
                        " is not a multiple of mid_channels " + std::to_string(mid_channels));
      }
      break;
    case BlockKind::mbv2_inverted:
    case BlockKind::dpd:
      if (multiplier == 0) throw SpecError(what + "channel multiplier must be positive");
      break;
  }
}

std::size_t BlockSpec::expansion() const {
  switch (kind) {
    case BlockKind::psd: return out_channels / mid_channels;
    case BlockKind::resnet_bottleneck: return mid_channels ? out_channels / mid_channels : 0;
    default: return multiplier;
  }
}

// ---------------------------------------------------------------------------

ConvUnit::ConvUnit(std::string unit_name, ConvParams c, bool with_relu)
    : name(std::move(unit_name)), conv(std::move(c)), bn(conv.out_channels), relu(with_relu) {
  zero_grad();
}

Tensor ConvUnit::forward(const Tensor& x, bool training, const ForwardOptions& opts) {
  input_ = x;
  Tensor y = opts.reference ? conv2d_forward_reference(x, conv, opts.macs) : conv2d_forward(x, conv);
  bn_out_ = batch_norm_forward(y, bn, training, &bn_cache_);
  return relu ? dpd::relu(bn_out_) : bn_out_;
}

Tensor ConvUnit::backward(const Tensor& grad_out) {
  const Tensor g = relu ? relu_backward(bn_out_, grad_out) : grad_out;
  BatchNormGrads bg = batch_norm_backward(bn_cache_, bn, g);
  for (std::size_t c = 0; c < bn.channels; ++c) {
    grad_gamma[c] += bg.grad_gamma[c];
    grad_beta[c] += bg.grad_beta[c];
  }
  ConvGrads cg = conv2d_backward(input_, conv, bg.grad_x);
  grad_w += cg.grad_w;
  return std::move(cg.grad_x);
}

// Zeroes in place so ParamRef spans stay valid.
void ConvUnit::zero_grad() {
  if (grad_w.shape() == conv.weight_shape()) {
    grad_w.fill(0.0);
  } else {
    grad_w = Tensor(conv.weight_shape());
  }
  grad_gamma.resize(bn.channels);
  grad_beta.resize(bn.channels);
  std::fill(grad_gamma.begin(), grad_gamma.end(), 0.0);
  std::fill(grad_beta.begin(), grad_beta.end(), 0.0);
}

std::string ConvUnit::conv_name(const std::string& scope) const { return scope + "." + name; }

std::string ConvUnit::bn_name(const std::string& scope) const { return scope + "." + name + "_bn"; }

void ConvUnit::collect(const std::string& scope, std::vector<ParamRef>& params,
                       std::vector<BufferRef>& buffers) {
  params.push_back({conv_name(scope), "weight", conv.weights.data(), grad_w.data(), true});
  params.push_back({bn_name(scope), "gamma", bn.gamma, grad_gamma, false});
  params.push_back({bn_name(scope), "beta", bn.beta, grad_beta, false});
  buffers.push_back({bn_name(scope), "running_mean", bn.running_mean});
  buffers.push_back({bn_name(scope), "running_var", bn.running_var});
}

// ---------------------------------------------------------------------------

ConvParams ConvLayout::make_params() const {
  switch (kind) {
    case ConvKind::pointwise: return pointwise_conv(in_channels, out_channels, stride);
    case ConvKind::depthwise: return depthwise_conv(in_channels, multiplier, kernel, stride);
    case ConvKind::standard: break;
  }
  return standard_conv(in_channels, out_channels, kernel, stride);
}

namespace {

ConvLayout pwc(const char* name, std::size_t in, std::size_t out, std::size_t stride, bool relu) {
  return {name, ConvKind::pointwise, in, out, 1, 1, stride, relu};
}

ConvLayout conv3(const char* name, std::size_t in, std::size_t out, std::size_t stride, bool relu) {
  return {name, ConvKind::standard, in, out, 1, 3, stride, relu};
}

ConvLayout dwc(const char* name, std::size_t in, std::size_t m, std::size_t stride, bool relu) {
  return {name, ConvKind::depthwise, in, in * m, m, 3, stride, relu};
}

}  // namespace

BlockLayout block_layout(const BlockSpec& spec) {
  spec.validate();
  const std::size_t k = spec.in_channels;
  const std::size_t k_out = spec.out_channels;
  const std::size_t s = spec.stride;
  const std::size_t mid = spec.mid_channels;
  const std::size_t m = spec.multiplier;
  const bool same_shape = s == 1 && k == k_out;

  BlockLayout layout;
  switch (spec.kind) {
    case BlockKind::resnet_bottleneck:
      layout.units = {pwc("pwc1", k, mid, 1, true), conv3("conv2", mid, mid, s, true),
                      pwc("pwc3", mid, k_out, 1, false)};
      layout.shortcut = same_shape ? Shortcut::identity : Shortcut::projection;
      break;
    case BlockKind::psd:
      layout.units = {pwc("pwc1", k, mid, 1, true), conv3("conv2", mid, mid, s, true),
                      dwc("dwc3", mid, k_out / mid, 1, false)};
      layout.shortcut = same_shape ? Shortcut::identity : Shortcut::projection;
      break;
    case BlockKind::mbv2_inverted:
      layout.units = {pwc("pwc1", k, m * k, 1, true), dwc("dwc2", m * k, 1, s, true),
                      pwc("pwc3", m * k, k_out, 1, false)};
      layout.shortcut = same_shape ? Shortcut::identity : Shortcut::none;
      break;
    case BlockKind::dpd:
      layout.units = {dwc("dwc1", k, m, s, true), pwc("pwc2", m * k, k_out, 1, true),
                      dwc("dwc3", k_out, 1, 1, true)};
      layout.shortcut = same_shape ? Shortcut::identity : Shortcut::none;
      break;
  }
  if (layout.shortcut == Shortcut::projection) layout.projection = pwc("proj", k, k_out, s, false);
  return layout;
}

Block::Block(const BlockSpec& spec, Rng& rng) : spec_(spec) {
  const BlockLayout layout = block_layout(spec_);
  for (const ConvLayout& u : layout.units) units_.emplace_back(u.name, u.make_params(), u.relu);
  if (layout.projection) {
    projection_.emplace(layout.projection->name, layout.projection->make_params(), false);
  }
  shortcut_ = layout.shortcut;
  switch (spec_.kind) {
    case BlockKind::resnet_bottleneck:
    case BlockKind::psd: merge_ = Merge::before_relu; break;
    case BlockKind::mbv2_inverted: merge_ = Merge::linear; break;
    case BlockKind::dpd: merge_ = Merge::after_relu; break;
  }
  for (ConvUnit& u : units_) he_init(u.conv, rng);
  if (projection_) he_init(projection_->conv, rng);
}

Shape Block::output_shape(const Shape& input) const {
  Shape s = input;
  for (const ConvUnit& u : units_) s = u.conv.output_shape(s);
  return s;
}

Tensor Block::forward(const Tensor& x, bool training, const ForwardOptions& opts) {
  if (x.shape().c != spec_.in_channels) {
    throw ShapeError(std::string(to_string(spec_.kind)) + " block: expected " +
                     std::to_string(spec_.in_channels) + " input channels, got " +
                     std::to_string(x.shape().c));
  }
  Tensor y = x;
  for (ConvUnit& u : units_) y = u.forward(y, training, opts);

  switch (shortcut_) {
    case Shortcut::identity: y += x; break;
    case Shortcut::projection: y += projection_->forward(x, training, opts); break;
    case Shortcut::none: break;
  }
  if (merge_ == Merge::before_relu) {
    pre_activation_ = y;
    return relu(y);
  }
  return y;
}

Tensor Block::backward(const Tensor& grad_out) {
  const Tensor g = merge_ == Merge::before_relu ? relu_backward(pre_activation_, grad_out) : grad_out;
  Tensor grad_x = g;
  for (auto it = units_.rbegin(); it != units_.rend(); ++it) grad_x = it->backward(grad_x);
  switch (shortcut_) {
    case Shortcut::identity: grad_x += g; break;
    case Shortcut::projection: grad_x += projection_->backward(g); break;
    case Shortcut::none: break;
  }
  return grad_x;
}

void Block::zero_grad() {
  for (ConvUnit& u : units_) u.zero_grad();
  if (projection_) projection_->zero_grad();
}

void Block::collect(const std::string& scope, std::vector<ParamRef>& params,
                    std::vector<BufferRef>& buffers) {
  for (ConvUnit& u : units_) u.collect(scope, params, buffers);
  if (projection_) projection_->collect(scope, params, buffers);
}

}  // namespace dpd
