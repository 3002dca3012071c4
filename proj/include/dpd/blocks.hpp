#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpd/ops.hpp"

namespace dpd {

enum class BlockKind { resnet_bottleneck, psd, mbv2_inverted, dpd };

const char* to_string(BlockKind kind);
// Throws SpecError for an unknown name.
BlockKind block_kind_from_string(const std::string& name);

/// One bottleneck block, k -> k' channels at stride s.
///
/// `multiplier` is the channel multiplier of the expansion layer for mbv2/dpd.
/// For resnet/psd the final layer's expansion ratio is out/mid and
/// `multiplier` is ignored.
struct BlockSpec {
  BlockKind kind = BlockKind::dpd;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t multiplier = 1;
  std::size_t mid_channels = 0;

  // Throws SpecError.
  void validate() const;
  // Expansion multiplier of the depthwise expansion layer (psd: out/mid; dpd: m).
  std::size_t expansion() const;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

// Reference to one trainable array owned by a layer. `layer` is the layer's
// report name, shared with the cost report rows.
struct ParamRef {
  std::string layer;
  std::string role;  // weight | gamma | beta | bias
  std::span<double> value;
  std::span<double> grad;
  bool decay = false;
};

// Non-trained state carried in checkpoints (BN running statistics).
struct BufferRef {
  std::string layer;
  std::string role;
  std::span<double> value;
};

struct ForwardOptions {
  // Use the direct-loop reference convolution instead of im2col.
  bool reference = false;
  // Incremented once per multiply in conv and FC layers (reference path only
  // counts convolutions exactly; see conv2d_forward_reference).
  std::uint64_t* macs = nullptr;
};

// conv -> BN -> optional ReLU, with cached activations for one backward pass.
struct ConvUnit {
  std::string name;
  ConvParams conv;
  BatchNormParams bn;
  bool relu = true;

  Tensor grad_w;
  std::vector<double> grad_gamma;
  std::vector<double> grad_beta;

  ConvUnit() = default;
  ConvUnit(std::string name, ConvParams conv, bool relu);

  Tensor forward(const Tensor& x, bool training, const ForwardOptions& opts = {});
  // Accumulates parameter gradients; returns d loss / d input.
  Tensor backward(const Tensor& grad_out);
  void zero_grad();
  void collect(const std::string& scope, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers);

  std::string conv_name(const std::string& scope) const;
  std::string bn_name(const std::string& scope) const;

 private:
  Tensor input_;
  Tensor bn_out_;
  BatchNormCache bn_cache_;
};

enum class Shortcut { none, identity, projection };

// Weight-free description of one conv -> BN [-> ReLU] unit.
struct ConvLayout {
  std::string name;
  ConvKind kind = ConvKind::standard;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t multiplier = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool relu = true;

  // Allocates zero weights.
  ConvParams make_params() const;
};

// Layer structure of a block without any tensors; shared by the builder and
// the analytic cost counter.
struct BlockLayout {
  std::vector<ConvLayout> units;
  std::optional<ConvLayout> projection;
  Shortcut shortcut = Shortcut::none;
};

BlockLayout block_layout(const BlockSpec& spec);

class Block {
 public:
  // build_block: validates the spec and He-initializes every convolution.
  Block(const BlockSpec& spec, Rng& rng);

  const BlockSpec& spec() const noexcept { return spec_; }
  Shortcut shortcut() const noexcept { return shortcut_; }

  std::span<ConvUnit> units() noexcept { return units_; }
  std::span<const ConvUnit> units() const noexcept { return units_; }
  ConvUnit* projection() noexcept { return projection_ ? &*projection_ : nullptr; }
  const ConvUnit* projection() const noexcept { return projection_ ? &*projection_ : nullptr; }

  Shape output_shape(const Shape& input) const;

  Tensor forward(const Tensor& x, bool training, const ForwardOptions& opts = {});
  // Must follow a forward call; accumulates parameter gradients.
  Tensor backward(const Tensor& grad_out);
  void zero_grad();

  void collect(const std::string& scope, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers);

 private:
  enum class Merge { before_relu, linear, after_relu };

  BlockSpec spec_;
  Shortcut shortcut_ = Shortcut::none;
  Merge merge_ = Merge::linear;
  std::vector<ConvUnit> units_;
  std::optional<ConvUnit> projection_;

  Tensor pre_activation_;
};

inline Block build_block(const BlockSpec& spec, Rng& rng) { return Block(spec, rng); }

}  // namespace dpd
