#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dpd/blocks.hpp"

namespace dpd {

struct StemSpec {
  std::size_t kernel = 3;
  std::size_t out_channels = 32;
  std::size_t stride = 1;

  friend bool operator==(const StemSpec&, const StemSpec&) = default;
};

// `repeats` copies of one block template; only the first copy uses `stride`
// and the input width of the previous stage.
struct StageSpec {
  BlockKind kind = BlockKind::dpd;
  std::size_t out_channels = 0;
  std::size_t mid_channels = 0;  // resnet/psd only
  std::size_t stride = 1;
  std::size_t repeats = 1;

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct HeadSpec {
  // Optional 1x1 conv + BN + ReLU before pooling; 0 disables it.
  std::size_t final_pwc = 0;
  // Expected spatial size of the pre-pool map; 0 accepts any size.
  std::size_t pool_window = 0;

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

/// Linear-chain network description with base (unscaled) widths.
///
/// The width multiplier alpha scales every block's out/mid channel count and
/// the optional head conv; the stem keeps its base width. The channel
/// multiplier m is handed to every dpd / mbv2 block.
struct NetworkSpec {
  std::string name;
  std::size_t input_size = 32;
  StemSpec stem;
  std::vector<StageSpec> stages;
  HeadSpec head;
  double alpha = 1.0;
  std::size_t multiplier = 1;
  std::size_t num_classes = 10;

  // Throws SpecError.
  void validate() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// round-half-up(alpha * c), at least 1.
std::size_t scale_channels(std::size_t channels, double alpha);

const std::vector<std::string>& builtin_names();

// Width multipliers of the scaling sweep, {1.25, ..., 4.0}, plus the base width 1.0.
const std::vector<double>& sweep_alphas();

// Throws SpecError for an unknown name.
NetworkSpec builtin_spec(const std::string& name, double alpha, std::size_t m,
                         std::size_t num_classes);

// Concrete blocks after alpha scaling, in execution order.
std::vector<BlockSpec> expand_blocks(const NetworkSpec& spec);

// Count of conv + FC weight layers, projection shortcuts excluded.
std::size_t weight_layer_count(const NetworkSpec& spec);

class Network {
 public:
  Network(const NetworkSpec& spec, Rng& rng);

  const NetworkSpec& spec() const noexcept { return spec_; }

  // Logits (N, num_classes, 1, 1).
  Tensor forward(const Tensor& x, bool training, const ForwardOptions& opts = {});
  // Must follow forward(); accumulates parameter gradients, returns d/dx.
  Tensor backward(const Tensor& grad_logits);
  void zero_grad();

  // Softmax of inference-mode logits.
  Tensor predict_proba(const Tensor& x);

  // Shape of the map entering global pooling, for an input shape.
  Shape feature_shape(const Shape& input) const;
  // Map entering global pooling from the last forward call.
  const Tensor& features() const noexcept { return features_; }

  std::vector<ParamRef> parameters();
  std::vector<BufferRef> buffers();

  ConvUnit& stem() noexcept { return stem_; }
  std::vector<Block>& blocks() noexcept { return blocks_; }
  ConvUnit* head_conv() noexcept { return head_ ? &*head_ : nullptr; }
  FullyConnectedParams& classifier() noexcept { return fc_; }

 private:
  NetworkSpec spec_;
  ConvUnit stem_;
  std::vector<Block> blocks_;
  std::optional<ConvUnit> head_;
  FullyConnectedParams fc_;
  Tensor fc_grad_w_;
  std::vector<double> fc_grad_b_;

  Shape input_shape_;
  Tensor features_;
  Tensor pooled_;
};

inline Network build_network(const NetworkSpec& spec, Rng& rng) { return Network(spec, rng); }

// Report names shared by parameter refs and cost report rows.
inline std::string block_scope(std::size_t index) { return "block" + std::to_string(index); }

}  // namespace dpd
