#include "dpd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dpd/errors.hpp"
#include "dpd/parallel.hpp"

namespace dpd {

const char* to_string(ConvKind kind) {
  switch (kind) {
    case ConvKind::standard: return "conv";
    case ConvKind::pointwise: return "pwc";
    case ConvKind::depthwise: return "dwc";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// ConvParams

Shape ConvParams::weight_shape() const {
  switch (kind) {
    case ConvKind::depthwise: return {multiplier * in_channels, 1, kernel, kernel};
    case ConvKind::pointwise: return {out_channels, in_channels, 1, 1};
    case ConvKind::standard: break;
  }
  return {out_channels, in_channels, kernel, kernel};
}

std::size_t ConvParams::fan_in() const {
  return kind == ConvKind::depthwise ? kernel * kernel : in_channels * kernel * kernel;
}

std::size_t ConvParams::output_dim(std::size_t input_dim) const {
  const std::size_t padded = input_dim + 2 * padding;
  if (padded < kernel) {
    throw ShapeError("kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

Shape ConvParams::output_shape(const Shape& input) const {
  if (input.c != in_channels) {
    throw ShapeError(std::string(to_string(kind)) + ": expected " + std::to_string(in_channels) +
                     " input channels, got " + std::to_string(input.c));
  }
  return {input.n, out_channels, output_dim(input.h), output_dim(input.w)};
}

void ConvParams::validate() const {
  if (in_channels == 0 || out_channels == 0 || kernel == 0 || multiplier == 0) {
    throw ShapeError("conv: channel, multiplier and kernel sizes must be positive");
  }
  if (stride != 1 && stride != 2) throw ShapeError("conv: stride must be 1 or 2");
  if (kind == ConvKind::pointwise && (kernel != 1 || padding != 0)) {
    throw ShapeError("pointwise conv requires kernel 1 and padding 0");
  }
  if (kind == ConvKind::depthwise && out_channels != multiplier * in_channels) {
    throw ShapeError("depthwise conv: out_channels must equal multiplier * in_channels");
  }
  if (kind != ConvKind::depthwise && multiplier != 1) {
    throw ShapeError("channel multiplier applies to depthwise conv only");
  }
  if (weights.shape() != weight_shape()) {
    throw ShapeError("conv weights " + weights.shape().str() + ", expected " +
                     weight_shape().str());
  }
}

ConvParams standard_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride) {
  ConvParams p;
  p.kind = ConvKind::standard;
  p.in_channels = in;
  p.out_channels = out;
  p.kernel = kernel;
  p.stride = stride;
  p.padding = kernel / 2;
  p.weights = Tensor(p.weight_shape());
  p.validate();
  return p;
}

ConvParams pointwise_conv(std::size_t in, std::size_t out, std::size_t stride) {
  ConvParams p;
  p.kind = ConvKind::pointwise;
  p.in_channels = in;
  p.out_channels = out;
  p.kernel = 1;
  p.stride = stride;
  p.padding = 0;
  p.weights = Tensor(p.weight_shape());
  p.validate();
  return p;
}

ConvParams depthwise_conv(std::size_t channels, std::size_t multiplier, std::size_t kernel,
                          std::size_t stride) {
  ConvParams p;
  p.kind = ConvKind::depthwise;
  p.in_channels = channels;
  p.multiplier = multiplier;
  p.out_channels = channels * multiplier;
  p.kernel = kernel;
  p.stride = stride;
  p.padding = kernel / 2;
  p.weights = Tensor(p.weight_shape());
  p.validate();
  return p;
}

void he_init(ConvParams& conv, Rng& rng) {
  conv.weights = he_normal_init(rng, conv.weight_shape(), conv.fan_in());
}

// ---------------------------------------------------------------------------
// Convolution kernels

namespace {

struct Geometry {
  std::size_t in_h, in_w, out_h, out_w, k, stride, pad;
  std::size_t taps() const { return k * k; }
  std::size_t out_hw() const { return out_h * out_w; }
};

Geometry geometry(const Shape& in, const ConvParams& p) {
  return {in.h, in.w, p.output_dim(in.h), p.output_dim(in.w), p.kernel, p.stride, p.padding};
}

// Output columns [lo, hi) whose input column ow*stride + kw - pad is inside
// the image.
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t stride,
                                                std::size_t kw, std::size_t pad) {
  std::size_t lo = 0;
  while (lo < out && lo * stride + kw < pad) ++lo;
  std::size_t hi = lo;
  while (hi < out && hi * stride + kw - pad < in) ++hi;
  return {lo, hi};
}

// col[(kh*k + kw) * out_hw + oh*out_w + ow] = plane[ih, iw] (0 where padded).
void im2col_plane(const double* plane, const Geometry& g, double* col) {
  for (std::size_t kh = 0; kh < g.k; ++kh) {
    for (std::size_t kw = 0; kw < g.k; ++kw) {
      double* row = col + (kh * g.k + kw) * g.out_hw();
      const auto [lo, hi] = valid_range(g.out_w, g.in_w, g.stride, kw, g.pad);
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad);
        double* dst = row + oh * g.out_w;
        if (ih < 0 || ih >= static_cast<long>(g.in_h)) {
          std::fill(dst, dst + g.out_w, 0.0);
          continue;
        }
        const double* src = plane + ih * g.in_w + (lo * g.stride + kw - g.pad);
        std::fill(dst, dst + lo, 0.0);
        if (lo >= hi) {
          std::fill(dst, dst + g.out_w, 0.0);
        } else if (g.stride == 1) {
          std::copy(src, src + (hi - lo), dst + lo);
        } else {
          for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = src[(ow - lo) * g.stride];
        }
        std::fill(dst + hi, dst + g.out_w, 0.0);
      }
    }
  }
}

// Inverse scatter-add of im2col_plane.
void col2im_plane(const double* col, const Geometry& g, double* plane) {
  for (std::size_t kh = 0; kh < g.k; ++kh) {
    for (std::size_t kw = 0; kw < g.k; ++kw) {
      const double* row = col + (kh * g.k + kw) * g.out_hw();
      const auto [lo, hi] = valid_range(g.out_w, g.in_w, g.stride, kw, g.pad);
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad);
        if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
        if (lo >= hi) continue;
        double* dst = plane + ih * g.in_w + (lo * g.stride + kw - g.pad);
        const double* src = row + oh * g.out_w;
        for (std::size_t ow = lo; ow < hi; ++ow) dst[(ow - lo) * g.stride] += src[ow];
      }
    }
  }
}

// A stride-1 pointwise conv reads its input planes as the column matrix.
bool direct_columns(const ConvParams& p) { return p.kind == ConvKind::pointwise && p.stride == 1; }

void check_input(const Tensor& x, const ConvParams& p) {
  p.validate();
  (void)p.output_shape(x.shape());
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const ConvParams& p) {
  check_input(x, p);
  const Shape out_shape = p.output_shape(x.shape());
  Tensor y(out_shape);
  const Geometry g = geometry(x.shape(), p);
  const std::size_t hw = g.out_hw();
  const std::size_t taps = g.taps();
  const double* w = p.weights.data().data();

  parallel_for(x.shape().n, [&](int, std::size_t begin, std::size_t end) {
    if (p.kind == ConvKind::depthwise) {
      std::vector<double> col(taps * hw);
      for (std::size_t n = begin; n < end; ++n) {
        for (std::size_t c = 0; c < p.in_channels; ++c) {
          im2col_plane(x.plane(n, c), g, col.data());
          for (std::size_t j = 0; j < p.multiplier; ++j) {
            const std::size_t oc = c * p.multiplier + j;
            const double* wk = w + oc * taps;
            double* out = y.plane(n, oc);
            for (std::size_t r = 0; r < taps; ++r) {
              const double wr = wk[r];
              const double* src = col.data() + r * hw;
              for (std::size_t i = 0; i < hw; ++i) out[i] += wr * src[i];
            }
          }
        }
      }
      return;
    }
    // standard / pointwise: y[o, :] = sum_r W[o, r] * col[r, :]
    const std::size_t rows = p.in_channels * taps;
    const bool direct = direct_columns(p);
    std::vector<double> buf(direct ? 0 : rows * hw);
    for (std::size_t n = begin; n < end; ++n) {
      const double* col = direct ? x.plane(n, 0) : buf.data();
      for (std::size_t c = 0; !direct && c < p.in_channels; ++c) {
        im2col_plane(x.plane(n, c), g, buf.data() + c * taps * hw);
      }
      for (std::size_t o = 0; o < p.out_channels; ++o) {
        const double* wo = w + o * rows;
        double* out = y.plane(n, o);
        for (std::size_t r = 0; r < rows; ++r) {
          const double wr = wo[r];
          if (wr == 0.0) continue;
          const double* src = col + r * hw;
          for (std::size_t i = 0; i < hw; ++i) out[i] += wr * src[i];
        }
      }
    }
  });
  return y;
}

Tensor conv2d_forward_reference(const Tensor& x, const ConvParams& p, std::uint64_t* macs) {
  check_input(x, p);
  const Shape in = x.shape();
  const Shape out_shape = p.output_shape(in);
  const std::size_t k = p.kernel;
  const std::size_t pad = p.padding;

  Tensor padded({in.n, in.c, in.h + 2 * pad, in.w + 2 * pad});
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t h = 0; h < in.h; ++h)
        for (std::size_t w = 0; w < in.w; ++w) padded.at(n, c, h + pad, w + pad) = x.at(n, c, h, w);

  Tensor y(out_shape);
  std::uint64_t count = 0;
  for (std::size_t n = 0; n < out_shape.n; ++n) {
    for (std::size_t o = 0; o < out_shape.c; ++o) {
      // Depthwise output o reads only input channel o / m through filter o.
      const std::size_t c_begin = p.kind == ConvKind::depthwise ? o / p.multiplier : 0;
      const std::size_t c_end = p.kind == ConvKind::depthwise ? c_begin + 1 : in.c;
      for (std::size_t oh = 0; oh < out_shape.h; ++oh) {
        for (std::size_t ow = 0; ow < out_shape.w; ++ow) {
          double acc = 0.0;
          for (std::size_t c = c_begin; c < c_end; ++c) {
            const std::size_t wc = p.kind == ConvKind::depthwise ? 0 : c;
            for (std::size_t kh = 0; kh < k; ++kh) {
              for (std::size_t kw = 0; kw < k; ++kw) {
                acc += p.weights.at(o, wc, kh, kw) *
                       padded.at(n, c, oh * p.stride + kh, ow * p.stride + kw);
                ++count;
              }
            }
          }
          y.at(n, o, oh, ow) = acc;
        }
      }
    }
  }
  if (macs) *macs += count;
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out) {
  check_input(x, p);
  const Shape out_shape = p.output_shape(x.shape());
  if (grad_out.shape() != out_shape) {
    throw ShapeError("conv backward: grad_out " + grad_out.shape().str() + ", expected " +
                     out_shape.str());
  }
  const Geometry g = geometry(x.shape(), p);
  const std::size_t hw = g.out_hw();
  const std::size_t taps = g.taps();
  const double* w = p.weights.data().data();
  const std::size_t wsize = p.weights.size();

  ConvGrads grads{Tensor(x.shape()), Tensor(p.weight_shape())};
  const int workers = worker_count(x.shape().n);
  std::vector<std::vector<double>> partial_w(std::max(workers, 1), std::vector<double>(wsize, 0.0));

  parallel_for(x.shape().n, [&](int worker, std::size_t begin, std::size_t end) {
    std::vector<double>& gw = partial_w[worker];
    if (p.kind == ConvKind::depthwise) {
      std::vector<double> col(taps * hw);
      std::vector<double> gcol(taps * hw);
      for (std::size_t n = begin; n < end; ++n) {
        for (std::size_t c = 0; c < p.in_channels; ++c) {
          im2col_plane(x.plane(n, c), g, col.data());
          std::fill(gcol.begin(), gcol.end(), 0.0);
          for (std::size_t j = 0; j < p.multiplier; ++j) {
            const std::size_t oc = c * p.multiplier + j;
            const double* gy = grad_out.plane(n, oc);
            const double* wk = w + oc * taps;
            double* gwk = gw.data() + oc * taps;
            for (std::size_t r = 0; r < taps; ++r) {
              const double* src = col.data() + r * hw;
              double* gsrc = gcol.data() + r * hw;
              double acc = 0.0;
              const double wr = wk[r];
              for (std::size_t i = 0; i < hw; ++i) {
                acc += gy[i] * src[i];
                gsrc[i] += wr * gy[i];
              }
              gwk[r] += acc;
            }
          }
          col2im_plane(gcol.data(), g, grads.grad_x.plane(n, c));
        }
      }
      return;
    }
    const std::size_t rows = p.in_channels * taps;
    const bool direct = direct_columns(p);
    std::vector<double> col_buf(direct ? 0 : rows * hw);
    std::vector<double> gcol_buf(direct ? 0 : rows * hw);
    for (std::size_t n = begin; n < end; ++n) {
      const double* col = direct ? x.plane(n, 0) : col_buf.data();
      double* gcol = direct ? grads.grad_x.plane(n, 0) : gcol_buf.data();
      for (std::size_t c = 0; !direct && c < p.in_channels; ++c) {
        im2col_plane(x.plane(n, c), g, col_buf.data() + c * taps * hw);
      }
      std::fill(gcol, gcol + rows * hw, 0.0);
      for (std::size_t o = 0; o < p.out_channels; ++o) {
        const double* gy = grad_out.plane(n, o);
        const double* wo = w + o * rows;
        double* gwo = gw.data() + o * rows;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* src = col + r * hw;
          double* gsrc = gcol + r * hw;
          const double wr = wo[r];
          double acc = 0.0;
          for (std::size_t i = 0; i < hw; ++i) {
            acc += gy[i] * src[i];
            gsrc[i] += wr * gy[i];
          }
          gwo[r] += acc;
        }
      }
      for (std::size_t c = 0; !direct && c < p.in_channels; ++c) {
        col2im_plane(gcol_buf.data() + c * taps * hw, g, grads.grad_x.plane(n, c));
      }
    }
  });

  auto gw_out = grads.grad_w.data();
  for (const auto& part : partial_w) {
    for (std::size_t i = 0; i < wsize; ++i) gw_out[i] += part[i];
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Batch normalization

BatchNormParams::BatchNormParams(std::size_t c)
    : channels(c), gamma(c, 1.0), beta(c, 0.0), running_mean(c, 0.0), running_var(c, 1.0) {}

void BatchNormParams::validate() const {
  if (gamma.size() != channels || beta.size() != channels || running_mean.size() != channels ||
      running_var.size() != channels) {
    throw ShapeError("batch norm: per-channel arrays must have length " + std::to_string(channels));
  }
  for (double v : running_var) {
    if (v < 0.0) throw ArgumentError("batch norm: running_var must be non-negative");
  }
  if (!(eps > 0.0)) throw ArgumentError("batch norm: eps must be positive");
}

Tensor batch_norm_forward(const Tensor& x, BatchNormParams& p, bool training,
                          BatchNormCache* cache) {
  p.validate();
  const Shape s = x.shape();
  if (s.c != p.channels) {
    throw ShapeError("batch norm: expected " + std::to_string(p.channels) + " channels, got " +
                     std::to_string(s.c));
  }
  const std::size_t count = s.n * s.h * s.w;
  const std::size_t hw = s.h * s.w;
  if (training && count < 2) {
    throw ShapeError("batch norm: degenerate batch, N*H*W = " + std::to_string(count) +
                     " < 2 in training mode");
  }

  Tensor y(s);
  Tensor x_hat(s);
  std::vector<double> inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    double mean, var;
    if (training) {
      double sum = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* src = x.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) sum += src[i];
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* src = x.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) sq += (src[i] - mean) * (src[i] - mean);
      }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      p.running_mean[c] = p.momentum * p.running_mean[c] + (1.0 - p.momentum) * mean;
      p.running_var[c] = p.momentum * p.running_var[c] + (1.0 - p.momentum) * unbiased;
    } else {
      mean = p.running_mean[c];
      var = p.running_var[c];
    }
    const double istd = 1.0 / std::sqrt(var + p.eps);
    inv_std[c] = istd;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* src = x.plane(n, c);
      double* xh = x_hat.plane(n, c);
      double* dst = y.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = (src[i] - mean) * istd;
        dst[i] = p.gamma[c] * xh[i] + p.beta[c];
      }
    }
  }
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->training = training;
  }
  return y;
}

BatchNormGrads batch_norm_backward(const BatchNormCache& cache, const BatchNormParams& p,
                                   const Tensor& grad_out) {
  const Shape s = cache.x_hat.shape();
  if (grad_out.shape() != s) {
    throw ShapeError("batch norm backward: grad_out " + grad_out.shape().str() + ", expected " +
                     s.str());
  }
  const std::size_t hw = s.h * s.w;
  const double count = static_cast<double>(s.n * hw);
  BatchNormGrads g{Tensor(s), std::vector<double>(s.c, 0.0), std::vector<double>(s.c, 0.0)};
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* dy = grad_out.plane(n, c);
      const double* xh = cache.x_hat.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * xh[i];
      }
    }
    g.grad_beta[c] = sum_dy;
    g.grad_gamma[c] = sum_dy_xhat;
    const double scale = p.gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* dy = grad_out.plane(n, c);
      const double* xh = cache.x_hat.plane(n, c);
      double* dx = g.grad_x.plane(n, c);
      if (cache.training) {
        for (std::size_t i = 0; i < hw; ++i) {
          dx[i] = scale * (dy[i] - sum_dy / count - xh[i] * sum_dy_xhat / count);
        }
      } else {
        for (std::size_t i = 0; i < hw; ++i) dx[i] = scale * dy[i];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Activation, pooling, classifier

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  if (x.shape() != grad_out.shape()) throw ShapeError("relu backward: shape mismatch");
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape s = x.shape();
  if (s.h == 0 || s.w == 0) throw ShapeError("global_avg_pool: empty spatial plane");
  Tensor y({s.n, s.c, 1, 1});
  const std::size_t hw = s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = x.plane(n, c);
      double sum = 0.0;
      for (std::size_t i = 0; i < hw; ++i) sum += src[i];
      y.at(n, c, 0, 0) = sum / static_cast<double>(hw);
    }
  }
  return y;
}

Tensor global_avg_pool_backward(const Shape& in, const Tensor& grad_out) {
  if (grad_out.shape() != Shape{in.n, in.c, 1, 1}) {
    throw ShapeError("global_avg_pool backward: grad_out " + grad_out.shape().str());
  }
  Tensor g(in);
  const std::size_t hw = in.h * in.w;
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      const double v = grad_out.at(n, c, 0, 0) / static_cast<double>(hw);
      double* dst = g.plane(n, c);
      std::fill(dst, dst + hw, v);
    }
  }
  return g;
}

FullyConnectedParams::FullyConnectedParams(std::size_t in, std::size_t out)
    : in_features(in), out_features(out), weights({out, in, 1, 1}), bias(out, 0.0) {}

void he_init(FullyConnectedParams& fc, Rng& rng) {
  fc.weights = he_normal_init(rng, {fc.out_features, fc.in_features, 1, 1}, fc.in_features);
  std::fill(fc.bias.begin(), fc.bias.end(), 0.0);
}

void classifier_init(FullyConnectedParams& fc, Rng& rng) {
  fc.weights = Tensor({fc.out_features, fc.in_features, 1, 1});
  for (double& w : fc.weights.data()) w = rng.normal(0.0, 0.01);
  std::fill(fc.bias.begin(), fc.bias.end(), 0.0);
}

namespace {

void check_fc(const Tensor& x, const FullyConnectedParams& fc) {
  const Shape s = x.shape();
  if (s.c * s.h * s.w != fc.in_features) {
    throw ShapeError("fully_connected: expected " + std::to_string(fc.in_features) +
                     " features, got " + std::to_string(s.c * s.h * s.w));
  }
  if (fc.weights.shape() != Shape{fc.out_features, fc.in_features, 1, 1} ||
      fc.bias.size() != fc.out_features) {
    throw ShapeError("fully_connected: parameter shapes do not match in/out features");
  }
}

}  // namespace

Tensor fully_connected(const Tensor& x, const FullyConnectedParams& fc, std::uint64_t* macs) {
  check_fc(x, fc);
  const std::size_t batch = x.shape().n;
  Tensor y({batch, fc.out_features, 1, 1});
  const double* w = fc.weights.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    const double* in = x.data().data() + n * fc.in_features;
    for (std::size_t o = 0; o < fc.out_features; ++o) {
      double acc = fc.bias[o];
      const double* wo = w + o * fc.in_features;
      for (std::size_t i = 0; i < fc.in_features; ++i) acc += wo[i] * in[i];
      y.at(n, o, 0, 0) = acc;
    }
  }
  if (macs) *macs += batch * fc.in_features * fc.out_features;
  return y;
}

FullyConnectedGrads fully_connected_backward(const Tensor& x, const FullyConnectedParams& fc,
                                             const Tensor& grad_out) {
  check_fc(x, fc);
  const std::size_t batch = x.shape().n;
  if (grad_out.shape() != Shape{batch, fc.out_features, 1, 1}) {
    throw ShapeError("fully_connected backward: grad_out " + grad_out.shape().str());
  }
  FullyConnectedGrads g{Tensor(x.shape()), Tensor(fc.weights.shape()),
                        std::vector<double>(fc.out_features, 0.0)};
  const double* w = fc.weights.data().data();
  double* gw = g.grad_w.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    const double* in = x.data().data() + n * fc.in_features;
    double* gin = g.grad_x.data().data() + n * fc.in_features;
    for (std::size_t o = 0; o < fc.out_features; ++o) {
      const double dy = grad_out.at(n, o, 0, 0);
      g.grad_b[o] += dy;
      const double* wo = w + o * fc.in_features;
      double* gwo = gw + o * fc.in_features;
      for (std::size_t i = 0; i < fc.in_features; ++i) {
        gwo[i] += dy * in[i];
        gin[i] += dy * wo[i];
      }
    }
  }
  return g;
}

Tensor softmax(const Tensor& logits) {
  const Shape s = logits.shape();
  const std::size_t classes = s.c * s.h * s.w;
  Tensor p(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* z = logits.data().data() + n * classes;
    double* out = p.data().data() + n * classes;
    const double zmax = *std::max_element(z, z + classes);
    double total = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      out[k] = std::exp(z[k] - zmax);
      total += out[k];
    }
    for (std::size_t k = 0; k < classes; ++k) out[k] /= total;
  }
  return p;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const Shape s = logits.shape();
  const std::size_t classes = s.c * s.h * s.w;
  if (labels.size() != s.n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(s.n));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ArgumentError("softmax_cross_entropy: label " + std::to_string(label) +
                          " out of range for " + std::to_string(classes) + " classes");
    }
  }
  LossResult r{0.0, softmax(logits)};
  const double inv_batch = s.n > 0 ? 1.0 / static_cast<double>(s.n) : 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    double* g = r.grad.data().data() + n * classes;
    const std::size_t label = static_cast<std::size_t>(labels[n]);
    // log p computed from logits for accuracy when p underflows.
    const double* z = logits.data().data() + n * classes;
    const double zmax = *std::max_element(z, z + classes);
    double total = 0.0;
    for (std::size_t k = 0; k < classes; ++k) total += std::exp(z[k] - zmax);
    r.loss -= (z[label] - zmax - std::log(total)) * inv_batch;
    g[label] -= 1.0;
    for (std::size_t k = 0; k < classes; ++k) g[k] *= inv_batch;
  }
  return r;
}

}  // namespace dpd
