#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dpd/rng.hpp"
#include "dpd/tensor.hpp"

namespace dpd {

enum class ConvKind { standard, pointwise, depthwise };

const char* to_string(ConvKind kind);

/// Convolution layer parameters. No bias: every convolution in the supported
/// networks feeds a batch normalization.
///
/// Weight layouts:
///   standard  (out, C, k, k)
///   pointwise (out, C, 1, 1)
///   depthwise (m*C, 1, k, k), output channel c*m + j is filter j of input c.
struct ConvParams {
  ConvKind kind = ConvKind::standard;
  std::size_t in_channels = 0;
  std::size_t multiplier = 1;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  Tensor weights;

  Shape weight_shape() const;
  std::size_t fan_in() const;
  std::size_t output_dim(std::size_t input_dim) const;
  Shape output_shape(const Shape& input) const;

  // Throws ShapeError on a broken invariant (kernel/padding rules, weight
  // shape, stride outside {1, 2}).
  void validate() const;
};

// Factories produce zero weights with the conventional padding: k/2 for
// k x k kernels, 0 for pointwise.
ConvParams standard_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride);
ConvParams pointwise_conv(std::size_t in, std::size_t out, std::size_t stride = 1);
ConvParams depthwise_conv(std::size_t channels, std::size_t multiplier, std::size_t kernel,
                          std::size_t stride);

void he_init(ConvParams& conv, Rng& rng);

// im2col + GEMM path, parallel over the batch.
Tensor conv2d_forward(const Tensor& x, const ConvParams& params);

// Direct nested loops over an explicitly zero-padded copy of the input. Every
// kernel tap performs one multiply, padded taps included; when `macs` is
// non-null it is incremented once per multiply.
Tensor conv2d_forward_reference(const Tensor& x, const ConvParams& params,
                                std::uint64_t* macs = nullptr);

struct ConvGrads {
  Tensor grad_x;
  Tensor grad_w;
};

ConvGrads conv2d_backward(const Tensor& x, const ConvParams& params, const Tensor& grad_out);

struct BatchNormParams {
  std::size_t channels = 0;
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  // running <- momentum * running + (1 - momentum) * batch
  double momentum = 0.9;

  BatchNormParams() = default;
  explicit BatchNormParams(std::size_t channels);

  void validate() const;
};

struct BatchNormCache {
  Tensor x_hat;
  std::vector<double> inv_std;
  bool training = false;
};

// Training mode normalizes with batch statistics over (N, H, W) and updates
// the running statistics; the running variance receives the unbiased batch
// variance. Inference mode uses the running statistics and mutates nothing.
Tensor batch_norm_forward(const Tensor& x, BatchNormParams& params, bool training,
                          BatchNormCache* cache = nullptr);

struct BatchNormGrads {
  Tensor grad_x;
  std::vector<double> grad_gamma;
  std::vector<double> grad_beta;
};

BatchNormGrads batch_norm_backward(const BatchNormCache& cache, const BatchNormParams& params,
                                   const Tensor& grad_out);

Tensor relu(const Tensor& x);
// Gradient of relu given its forward input (or output; the mask is the same).
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

struct FullyConnectedParams {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Tensor weights;  // (out, in, 1, 1)
  std::vector<double> bias;

  FullyConnectedParams() = default;
  FullyConnectedParams(std::size_t in, std::size_t out);
};

void he_init(FullyConnectedParams& fc, Rng& rng);
// Weights N(0, 0.01^2), zero bias; keeps initial logits near uniform.
void classifier_init(FullyConnectedParams& fc, Rng& rng);

// Affine map on the flattened C*H*W vector of each sample; output (N, out, 1, 1).
Tensor fully_connected(const Tensor& x, const FullyConnectedParams& fc,
                       std::uint64_t* macs = nullptr);

struct FullyConnectedGrads {
  Tensor grad_x;
  Tensor grad_w;
  std::vector<double> grad_b;
};

FullyConnectedGrads fully_connected_backward(const Tensor& x, const FullyConnectedParams& fc,
                                             const Tensor& grad_out);

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits
};

// Mean over the batch of -log softmax(logits)[label]. Logits are (N, K, 1, 1).
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Row-wise softmax of (N, K, 1, 1) logits.
Tensor softmax(const Tensor& logits);

}  // namespace dpd
