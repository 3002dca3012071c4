#include "dpd/network.hpp"

#include <algorithm>
#include <cmath>

#include "dpd/errors.hpp"

namespace dpd {

std::size_t scale_channels(std::size_t channels, double alpha) {
  const double scaled = std::floor(alpha * static_cast<double>(channels) + 0.5);
  return scaled < 1.0 ? 1 : static_cast<std::size_t>(scaled);
}

const std::vector<std::string>& builtin_names() {
  static const std::vector<std::string> names = {"resnet50_cifar", "psdnet50_cifar", "dpdnet_cifar",
                                                 "mbv2_20_cifar", "dpdnet_imagenet"};
  return names;
}

const std::vector<double>& sweep_alphas() {
  static const std::vector<double> alphas = {1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0};
  return alphas;
}

namespace {

std::vector<BlockSpec> expand(const NetworkSpec& spec) {
  std::vector<BlockSpec> blocks;
  std::size_t in = spec.stem.out_channels;
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const StageSpec& st = spec.stages[i];
    const std::size_t out = scale_channels(st.out_channels, spec.alpha);
    const std::size_t mid = st.mid_channels ? scale_channels(st.mid_channels, spec.alpha) : 0;
    for (std::size_t r = 0; r < st.repeats; ++r) {
      BlockSpec b{st.kind, in, out, r == 0 ? st.stride : 1, spec.multiplier, mid};
      try {
        b.validate();
      } catch (const SpecError& e) {
        throw SpecError("stage " + std::to_string(i) + ": " + e.what());
      }
      blocks.push_back(b);
      in = out;
    }
  }
  return blocks;
}

}  // namespace

void NetworkSpec::validate() const {
  const std::string what = (name.empty() ? std::string("network") : name) + ": ";
  if (!(alpha > 0.0 && alpha <= 8.0)) throw SpecError(what + "alpha must lie in (0, 8]");
  if (multiplier == 0) throw SpecError(what + "channel multiplier must be positive");
  if (num_classes == 0) throw SpecError(what + "num_classes must be positive");
  if (input_size == 0) throw SpecError(what + "input size must be positive");
  if (stem.kernel == 0 || stem.out_channels == 0) throw SpecError(what + "stem kernel and width must be positive");
  if (stem.stride != 1 && stem.stride != 2) throw SpecError(what + "stem stride must be 1 or 2");
  if (stages.empty()) throw SpecError(what + "at least one stage is required");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& st = stages[i];
    const std::string where = what + "stage " + std::to_string(i) + ": ";
    if (st.repeats == 0) throw SpecError(where + "repeat count must be at least 1");
    if (st.stride != 1 && st.stride != 2) throw SpecError(where + "stride must be 1 or 2");
    if (st.out_channels == 0) throw SpecError(where + "out channels must be positive");
    const bool squeezes = st.kind == BlockKind::resnet_bottleneck || st.kind == BlockKind::psd;
    if (squeezes && st.mid_channels == 0) throw SpecError(where + "mid channels required");
  }
  (void)expand(*this);
}

namespace {

NetworkSpec cifar_resnet(const char* name, BlockKind kind) {
  NetworkSpec s;
  s.name = name;
  s.input_size = 32;
  s.stem = {3, 16, 1};
  // Squeeze widths 32/64/128; see README "Architecture notes".
  s.stages = {{kind, 128, 32, 1, 5}, {kind, 256, 64, 2, 6}, {kind, 512, 128, 2, 5}};
  s.head = {0, 8};
  return s;
}

NetworkSpec cifar_inverted(const char* name, BlockKind kind) {
  NetworkSpec s;
  s.name = name;
  s.input_size = 32;
  s.stem = {3, 32, 1};
  s.stages = {{kind, 16, 0, 1, 1}, {kind, 24, 0, 1, 1}, {kind, 32, 0, 2, 1},
              {kind, 64, 0, 1, 1}, {kind, 96, 0, 2, 1}, {kind, 160, 0, 1, 1}};
  s.head = {0, 8};
  return s;
}

NetworkSpec imagenet_dpd() {
  NetworkSpec s;
  s.name = "dpdnet_imagenet";
  s.input_size = 224;
  s.stem = {3, 32, 2};
  const BlockKind k = BlockKind::dpd;
  s.stages = {{k, 16, 0, 1, 1}, {k, 24, 0, 2, 2}, {k, 32, 0, 2, 3}, {k, 64, 0, 2, 4},
              {k, 96, 0, 1, 3}, {k, 160, 0, 2, 3}, {k, 320, 0, 1, 1}};
  s.head = {1280, 7};
  return s;
}

}  // namespace

NetworkSpec builtin_spec(const std::string& name, double alpha, std::size_t m,
                         std::size_t num_classes) {
  NetworkSpec s;
  if (name == "resnet50_cifar") {
    s = cifar_resnet("resnet50_cifar", BlockKind::resnet_bottleneck);
  } else if (name == "psdnet50_cifar") {
    s = cifar_resnet("psdnet50_cifar", BlockKind::psd);
  } else if (name == "dpdnet_cifar") {
    s = cifar_inverted("dpdnet_cifar", BlockKind::dpd);
  } else if (name == "mbv2_20_cifar") {
    s = cifar_inverted("mbv2_20_cifar", BlockKind::mbv2_inverted);
  } else if (name == "dpdnet_imagenet") {
    s = imagenet_dpd();
  } else {
    throw SpecError("unknown builtin network '" + name + "'");
  }
  s.alpha = alpha;
  s.multiplier = m;
  s.num_classes = num_classes;
  s.validate();
  return s;
}

std::vector<BlockSpec> expand_blocks(const NetworkSpec& spec) {
  spec.validate();
  return expand(spec);
}

std::size_t weight_layer_count(const NetworkSpec& spec) {
  std::size_t blocks = 0;
  for (const StageSpec& st : spec.stages) blocks += st.repeats;
  return 1 + 3 * blocks + (spec.head.final_pwc ? 1 : 0) + 1;
}

// ---------------------------------------------------------------------------

Network::Network(const NetworkSpec& spec, Rng& rng) : spec_(spec) {
  const std::vector<BlockSpec> block_specs = expand_blocks(spec_);
  stem_ = ConvUnit("conv", standard_conv(3, spec_.stem.out_channels, spec_.stem.kernel, spec_.stem.stride),
                   true);
  he_init(stem_.conv, rng);
  blocks_.reserve(block_specs.size());
  for (const BlockSpec& b : block_specs) blocks_.emplace_back(b, rng);
  std::size_t width = block_specs.back().out_channels;
  if (spec_.head.final_pwc) {
    const std::size_t head_width = scale_channels(spec_.head.final_pwc, spec_.alpha);
    head_.emplace("pwc", pointwise_conv(width, head_width), true);
    he_init(head_->conv, rng);
    width = head_width;
  }
  fc_ = FullyConnectedParams(width, spec_.num_classes);
  classifier_init(fc_, rng);
  zero_grad();
}

Shape Network::feature_shape(const Shape& input) const {
  Shape s = stem_.conv.output_shape(input);
  for (const Block& b : blocks_) s = b.output_shape(s);
  if (head_) s = head_->conv.output_shape(s);
  return s;
}

Tensor Network::forward(const Tensor& x, bool training, const ForwardOptions& opts) {
  const Shape fs = feature_shape(x.shape());
  const std::size_t window = spec_.head.pool_window;
  if (window && (fs.h != window || fs.w != window)) {
    throw ShapeError(spec_.name + ": input " + x.shape().str() + " yields a " +
                     std::to_string(fs.h) + "x" + std::to_string(fs.w) +
                     " map, pooling window is " + std::to_string(window) + "x" +
                     std::to_string(window));
  }
  input_shape_ = x.shape();
  Tensor y = stem_.forward(x, training, opts);
  for (Block& b : blocks_) y = b.forward(y, training, opts);
  if (head_) y = head_->forward(y, training, opts);
  features_ = y;
  pooled_ = global_avg_pool(features_);
  return fully_connected(pooled_, fc_, opts.macs);
}

Tensor Network::backward(const Tensor& grad_logits) {
  FullyConnectedGrads fg = fully_connected_backward(pooled_, fc_, grad_logits);
  fc_grad_w_ += fg.grad_w;
  for (std::size_t i = 0; i < fc_grad_b_.size(); ++i) fc_grad_b_[i] += fg.grad_b[i];
  Tensor g = global_avg_pool_backward(features_.shape(), fg.grad_x);
  if (head_) g = head_->backward(g);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g);
  return stem_.backward(g);
}

void Network::zero_grad() {
  stem_.zero_grad();
  for (Block& b : blocks_) b.zero_grad();
  if (head_) head_->zero_grad();
  if (fc_grad_w_.shape() == fc_.weights.shape()) {
    fc_grad_w_.fill(0.0);
  } else {
    fc_grad_w_ = Tensor(fc_.weights.shape());
  }
  fc_grad_b_.resize(fc_.out_features);
  std::fill(fc_grad_b_.begin(), fc_grad_b_.end(), 0.0);
}

Tensor Network::predict_proba(const Tensor& x) { return softmax(forward(x, false)); }

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> params;
  std::vector<BufferRef> buffers;
  stem_.collect("stem", params, buffers);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(block_scope(i), params, buffers);
  if (head_) head_->collect("head", params, buffers);
  params.push_back({"fc", "weight", fc_.weights.data(), fc_grad_w_.data(), true});
  params.push_back({"fc", "bias", fc_.bias, fc_grad_b_, false});
  return params;
}

std::vector<BufferRef> Network::buffers() {
  std::vector<ParamRef> params;
  std::vector<BufferRef> buffers;
  stem_.collect("stem", params, buffers);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(block_scope(i), params, buffers);
  if (head_) head_->collect("head", params, buffers);
  return buffers;
}

}  // namespace dpd
