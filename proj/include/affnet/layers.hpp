#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "affnet/rng.hpp"
#include "affnet/tensor.hpp"

namespace affnet::nn {

enum class Mode { kTrain, kInfer };

// ---------------------------------------------------------------------------
// Convolution. Layout: activations [N, H, W, C], kernels [k, k, Cin, Cout].
// "Same" zero padding of k/2 with odd kernels gives spatial output
// ceil(in / stride) for every kernel size.
// ---------------------------------------------------------------------------

template <typename T>
struct ConvLayer {
  int kernel_size = 1;
  int stride = 1;
  int in_channels = 1;
  int out_channels = 1;
  Tensor<T> kernel;  // [k, k, Cin, Cout]
  Tensor<T> bias;    // [Cout]
};

inline std::size_t conv_output_extent(std::size_t input, int stride) {
  return (input + static_cast<std::size_t>(stride) - 1) /
         static_cast<std::size_t>(stride);
}

template <typename T>
ConvLayer<T> make_conv(int kernel_size, int stride, int in_channels,
                       int out_channels, Rng& rng) {
  detail::require(kernel_size >= 1 && kernel_size % 2 == 1,
                  "conv kernel size must be odd and >= 1");
  detail::require(stride >= 1 && in_channels >= 1 && out_channels >= 1,
                  "conv dimensions must be positive");
  ConvLayer<T> layer;
  layer.kernel_size = kernel_size;
  layer.stride = stride;
  layer.in_channels = in_channels;
  layer.out_channels = out_channels;
  layer.kernel = Tensor<T>({static_cast<std::size_t>(kernel_size),
                            static_cast<std::size_t>(kernel_size),
                            static_cast<std::size_t>(in_channels),
                            static_cast<std::size_t>(out_channels)});
  layer.bias = Tensor<T>({static_cast<std::size_t>(out_channels)});
  const double fan_in =
      static_cast<double>(kernel_size) * kernel_size * in_channels;
  const double bound = std::sqrt(6.0 / fan_in);
  for (std::size_t i = 0; i < layer.kernel.size(); ++i)
    layer.kernel[i] = static_cast<T>(rng.uniform(-bound, bound));
  return layer;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvLayer<T>& layer) {
  detail::require(input.rank() == 4, "conv2d: input must be [N, H, W, C]");
  detail::require(input.dim(3) == static_cast<std::size_t>(layer.in_channels),
                  "conv2d: input channel count does not match layer");
  detail::require(input.dim(1) >= 1 && input.dim(2) >= 1,
                  "conv2d: input must be at least 1 x 1");
  const std::size_t n_batch = input.dim(0), in_h = input.dim(1),
                    in_w = input.dim(2);
  const int ks = layer.kernel_size, stride = layer.stride;
  const int pad = ks / 2;
  const std::size_t cin = static_cast<std::size_t>(layer.in_channels);
  const std::size_t cout = static_cast<std::size_t>(layer.out_channels);
  const std::size_t out_h = conv_output_extent(in_h, stride);
  const std::size_t out_w = conv_output_extent(in_w, stride);

  Tensor<T> output({n_batch, out_h, out_w, cout});
  T* out_data = output.data();
  const T* bias = layer.bias.data();
  for (std::size_t i = 0; i < output.size(); i += cout)
    for (std::size_t c = 0; c < cout; ++c) out_data[i + c] = bias[c];

  // Columns whose taps never leave the input need no bounds checks; the
  // border columns take the checked path.
  const long interior_lo_raw = (pad + stride - 1) / stride;
  const long interior_hi_raw =
      (static_cast<long>(in_w) - ks + pad) / stride + 1;
  const std::size_t ow_lo = static_cast<std::size_t>(
      std::clamp<long>(interior_lo_raw, 0, static_cast<long>(out_w)));
  const std::size_t ow_hi = static_cast<std::size_t>(
      std::clamp<long>(interior_hi_raw, static_cast<long>(ow_lo),
                       static_cast<long>(out_w)));

  const T* in_data = input.data();
  const T* kernel = layer.kernel.data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* in_n = in_data + n * in_h * in_w * cin;
    T* out_n = out_data + n * out_h * out_w * cout;
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      const long ih0 = static_cast<long>(oh) * stride - pad;
      for (int kh = 0; kh < ks; ++kh) {
        const long ih = ih0 + kh;
        if (ih < 0 || ih >= static_cast<long>(in_h)) continue;
        const T* in_row = in_n + static_cast<std::size_t>(ih) * in_w * cin;
        const T* k_h = kernel + static_cast<std::size_t>(kh) * ks * cin * cout;
        auto edge_column = [&](std::size_t ow) {
          const long iw0 = static_cast<long>(ow) * stride - pad;
          T* out_px = out_n + (oh * out_w + ow) * cout;
          for (int kw = 0; kw < ks; ++kw) {
            const long iw = iw0 + kw;
            if (iw < 0 || iw >= static_cast<long>(in_w)) continue;
            const T* in_px = in_row + static_cast<std::size_t>(iw) * cin;
            const T* k_w = k_h + static_cast<std::size_t>(kw) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T v = in_px[ci];
              const T* k_row = k_w + ci * cout;
              for (std::size_t co = 0; co < cout; ++co)
                out_px[co] += v * k_row[co];
            }
          }
        };
        for (std::size_t ow = 0; ow < ow_lo; ++ow) edge_column(ow);
        for (std::size_t ow = ow_hi; ow < out_w; ++ow) edge_column(ow);
        const std::size_t ks_cin = static_cast<std::size_t>(ks) * cin;
        // Compile-time channel width unrolls the hot loop for thin layers.
        auto interior = [&]<std::size_t kCout>() {
          const std::size_t width = kCout ? kCout : cout;
          T* out_px = out_n + (oh * out_w + ow_lo) * width;
          const T* in_base =
              in_row + (static_cast<long>(ow_lo) * stride - pad) * cin;
          for (std::size_t ow = ow_lo; ow < ow_hi;
               ++ow, out_px += width, in_base += stride * cin) {
            const T* in_px = in_base;
            const T* k_w = k_h;
            for (std::size_t t = 0; t < ks_cin; ++t, ++in_px, k_w += width) {
              const T v = *in_px;
              for (std::size_t co = 0; co < width; ++co)
                out_px[co] += v * k_w[co];
            }
          }
        };
        switch (cout) {
          case 1: interior.template operator()<1>(); break;
          case 2: interior.template operator()<2>(); break;
          case 3: interior.template operator()<3>(); break;
          case 4: interior.template operator()<4>(); break;
          default: interior.template operator()<0>(); break;
        }
      }
    }
  }
  ensure_finite(output, "conv2d output");
  return output;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> kernel;
  Tensor<T> bias;
};

// Exact gradients of conv2d. grad for the input can be skipped for the
// first layer of a network.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const ConvLayer<T>& layer,
                             bool need_input_grad = true) {
  detail::require(input.rank() == 4 && grad_out.rank() == 4,
                  "conv2d_backward: tensors must be [N, H, W, C]");
  const std::size_t n_batch = input.dim(0), in_h = input.dim(1),
                    in_w = input.dim(2);
  const int ks = layer.kernel_size, stride = layer.stride;
  const int pad = ks / 2;
  const std::size_t cin = static_cast<std::size_t>(layer.in_channels);
  const std::size_t cout = static_cast<std::size_t>(layer.out_channels);
  const std::size_t out_h = conv_output_extent(in_h, stride);
  const std::size_t out_w = conv_output_extent(in_w, stride);
  detail::require(grad_out.dim(0) == n_batch && grad_out.dim(1) == out_h &&
                      grad_out.dim(2) == out_w && grad_out.dim(3) == cout &&
                      input.dim(3) == cin,
                  "conv2d_backward: shape mismatch");

  ConvGrads<T> grads;
  grads.kernel = Tensor<T>(layer.kernel.shape());
  grads.bias = Tensor<T>(layer.bias.shape());
  if (need_input_grad) grads.input = Tensor<T>(input.shape());

  const T* gout = grad_out.data();
  T* gbias = grads.bias.data();
  for (std::size_t i = 0; i < grad_out.size(); i += cout)
    for (std::size_t c = 0; c < cout; ++c) gbias[c] += gout[i + c];

  const long interior_lo_raw = (pad + stride - 1) / stride;
  const long interior_hi_raw =
      (static_cast<long>(in_w) - ks + pad) / stride + 1;
  const std::size_t ow_lo = static_cast<std::size_t>(
      std::clamp<long>(interior_lo_raw, 0, static_cast<long>(out_w)));
  const std::size_t ow_hi = static_cast<std::size_t>(
      std::clamp<long>(interior_hi_raw, static_cast<long>(ow_lo),
                       static_cast<long>(out_w)));

  const T* in_data = input.data();
  const T* kernel = layer.kernel.data();
  T* gkernel = grads.kernel.data();
  T* ginput = need_input_grad ? grads.input.data() : nullptr;
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* in_n = in_data + n * in_h * in_w * cin;
    T* gin_n = ginput ? ginput + n * in_h * in_w * cin : nullptr;
    const T* gout_n = gout + n * out_h * out_w * cout;
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      const long ih0 = static_cast<long>(oh) * stride - pad;
      for (int kh = 0; kh < ks; ++kh) {
        const long ih = ih0 + kh;
        if (ih < 0 || ih >= static_cast<long>(in_h)) continue;
        const std::size_t in_row = static_cast<std::size_t>(ih) * in_w * cin;
        const T* k_h = kernel + static_cast<std::size_t>(kh) * ks * cin * cout;
        T* gk_h = gkernel + static_cast<std::size_t>(kh) * ks * cin * cout;
        auto edge_column = [&](std::size_t ow) {
          const long iw0 = static_cast<long>(ow) * stride - pad;
          const T* gout_px = gout_n + (oh * out_w + ow) * cout;
          for (int kw = 0; kw < ks; ++kw) {
            const long iw = iw0 + kw;
            if (iw < 0 || iw >= static_cast<long>(in_w)) continue;
            const std::size_t px = in_row + static_cast<std::size_t>(iw) * cin;
            const T* in_px = in_n + px;
            const std::size_t k_off = static_cast<std::size_t>(kw) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T* k_row = k_h + k_off + ci * cout;
              T* gk_row = gk_h + k_off + ci * cout;
              const T v = in_px[ci];
              T acc = T(0);
              for (std::size_t co = 0; co < cout; ++co) {
                const T g = gout_px[co];
                gk_row[co] += v * g;
                acc += g * k_row[co];
              }
              if (gin_n) gin_n[px + ci] += acc;
            }
          }
        };
        for (std::size_t ow = 0; ow < ow_lo; ++ow) edge_column(ow);
        for (std::size_t ow = ow_hi; ow < out_w; ++ow) edge_column(ow);
        const std::size_t ks_cin = static_cast<std::size_t>(ks) * cin;
        const std::size_t base_px =
            in_row + (static_cast<long>(ow_lo) * stride - pad) * cin;
        auto interior = [&]<std::size_t kCout>() {
          const std::size_t width = kCout ? kCout : cout;
          const T* gout_px = gout_n + (oh * out_w + ow_lo) * width;
          for (std::size_t ow = ow_lo, px = base_px; ow < ow_hi;
               ++ow, gout_px += width, px += stride * cin) {
            const T* in_px = in_n + px;
            T* gin_px = gin_n ? gin_n + px : nullptr;
            const T* k_w = k_h;
            T* gk_w = gk_h;
            for (std::size_t t = 0; t < ks_cin; ++t, k_w += width,
                             gk_w += width) {
              const T v = in_px[t];
              T acc = T(0);
              for (std::size_t co = 0; co < width; ++co) {
                const T g = gout_px[co];
                gk_w[co] += v * g;
                acc += g * k_w[co];
              }
              if (gin_px) gin_px[t] += acc;
            }
          }
        };
        switch (cout) {
          case 1: interior.template operator()<1>(); break;
          case 2: interior.template operator()<2>(); break;
          case 3: interior.template operator()<3>(); break;
          case 4: interior.template operator()<4>(); break;
          default: interior.template operator()<0>(); break;
        }
      }
    }
  }
  ensure_finite(grads.kernel, "conv2d kernel gradient");
  ensure_finite(grads.bias, "conv2d bias gradient");
  if (need_input_grad) ensure_finite(grads.input, "conv2d input gradient");
  return grads;
}

// ---------------------------------------------------------------------------
// Fully connected. Consumes any tensor whose trailing dims flatten to the
// layer's input width (row-major, channels last).
// ---------------------------------------------------------------------------

template <typename T>
struct FCLayer {
  int in_dim = 0;
  int out_dim = 0;
  Tensor<T> weights;  // [Din, Dout]
  Tensor<T> bias;     // [Dout]
};

template <typename T>
FCLayer<T> make_fc(int in_dim, int out_dim, Rng& rng) {
  detail::require(in_dim >= 1 && out_dim >= 1, "fc dimensions must be positive");
  FCLayer<T> layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.weights = Tensor<T>({static_cast<std::size_t>(in_dim),
                             static_cast<std::size_t>(out_dim)});
  layer.bias = Tensor<T>({static_cast<std::size_t>(out_dim)});
  const double bound = std::sqrt(6.0 / in_dim);
  for (std::size_t i = 0; i < layer.weights.size(); ++i)
    layer.weights[i] = static_cast<T>(rng.uniform(-bound, bound));
  return layer;
}

namespace detail2 {

template <typename T>
std::size_t fc_batch_size(const Tensor<T>& input, int in_dim) {
  if (input.rank() == 1) {
    affnet::detail::require(input.size() == static_cast<std::size_t>(in_dim),
                            "fc: input element count does not match layer");
    return 1;
  }
  std::size_t n = input.dim(0);
  affnet::detail::require(
      n > 0 && input.size() == n * static_cast<std::size_t>(in_dim),
      "fc: input element count does not match layer");
  return n;
}

}  // namespace detail2

template <typename T>
Tensor<T> fc(const Tensor<T>& input, const FCLayer<T>& layer) {
  const std::size_t n_batch = detail2::fc_batch_size(input, layer.in_dim);
  const std::size_t din = static_cast<std::size_t>(layer.in_dim);
  const std::size_t dout = static_cast<std::size_t>(layer.out_dim);
  Tensor<T> output(input.rank() == 1
                       ? std::vector<std::size_t>{dout}
                       : std::vector<std::size_t>{n_batch, dout});
  const T* in_data = input.data();
  const T* w = layer.weights.data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    T* out_row = output.data() + n * dout;
    for (std::size_t o = 0; o < dout; ++o) out_row[o] = layer.bias[o];
    const T* in_row = in_data + n * din;
    for (std::size_t i = 0; i < din; ++i) {
      const T v = in_row[i];
      const T* w_row = w + i * dout;
      for (std::size_t o = 0; o < dout; ++o) out_row[o] += v * w_row[o];
    }
  }
  ensure_finite(output, "fc output");
  return output;
}

template <typename T>
struct FCGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
FCGrads<T> fc_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                       const FCLayer<T>& layer) {
  const std::size_t n_batch = detail2::fc_batch_size(input, layer.in_dim);
  const std::size_t din = static_cast<std::size_t>(layer.in_dim);
  const std::size_t dout = static_cast<std::size_t>(layer.out_dim);
  detail::require(grad_out.size() == n_batch * dout,
                  "fc_backward: gradient shape mismatch");
  FCGrads<T> grads;
  grads.input = Tensor<T>(input.shape());
  grads.weights = Tensor<T>(layer.weights.shape());
  grads.bias = Tensor<T>(layer.bias.shape());
  const T* w = layer.weights.data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* g_row = grad_out.data() + n * dout;
    const T* in_row = input.data() + n * din;
    T* gin_row = grads.input.data() + n * din;
    for (std::size_t o = 0; o < dout; ++o) grads.bias[o] += g_row[o];
    for (std::size_t i = 0; i < din; ++i) {
      const T v = in_row[i];
      const T* w_row = w + i * dout;
      T* gw_row = grads.weights.data() + i * dout;
      T acc = T(0);
      for (std::size_t o = 0; o < dout; ++o) {
        const T g = g_row[o];
        gw_row[o] += v * g;
        acc += g * w_row[o];
      }
      gin_row[i] = acc;
    }
  }
  ensure_finite(grads.input, "fc input gradient");
  ensure_finite(grads.weights, "fc weight gradient");
  return grads;
}

// ---------------------------------------------------------------------------
// Batch normalization over the channel-last axis: statistics are taken per
// channel across batch and spatial dims. Train mode normalizes with biased
// batch statistics and folds them into the running estimates by exponential
// moving average; infer mode uses the running estimates.
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNorm {
  int channels = 0;
  Tensor<T> scale;
  Tensor<T> shift;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.9);
};

template <typename T>
BatchNorm<T> make_batchnorm(int channels) {
  detail::require(channels >= 1, "batch norm channel count must be positive");
  BatchNorm<T> bn;
  bn.channels = channels;
  bn.scale = Tensor<T>({static_cast<std::size_t>(channels)});
  bn.scale.fill(T(1));
  bn.shift = Tensor<T>({static_cast<std::size_t>(channels)});
  bn.running_mean = Tensor<T>({static_cast<std::size_t>(channels)});
  bn.running_var = Tensor<T>({static_cast<std::size_t>(channels)});
  bn.running_var.fill(T(1));
  return bn;
}

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;        // values before scale/shift
  std::vector<T> inv_std;      // per channel
  std::size_t group_size = 0;  // N * spatial elements per channel
};

namespace detail2 {

template <typename T>
void check_bn_input(const Tensor<T>& input, const BatchNorm<T>& bn) {
  affnet::detail::require(input.rank() == 2 || input.rank() == 4,
                          "batch norm input must be [N, C] or [N, H, W, C]");
  affnet::detail::require(
      input.dim(input.rank() - 1) == static_cast<std::size_t>(bn.channels),
      "batch norm channel count does not match input");
}

}  // namespace detail2

template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& input, BatchNorm<T>& bn,
                          BatchNormCache<T>* cache = nullptr) {
  detail2::check_bn_input(input, bn);
  detail::require(input.dim(0) >= 2,
                  "batch norm train mode requires batch size >= 2");
  const std::size_t channels = static_cast<std::size_t>(bn.channels);
  const std::size_t group = input.size() / channels;

  std::vector<T> mean(channels, T(0)), var(channels, T(0));
  const T* x = input.data();
  for (std::size_t i = 0; i < input.size(); i += channels)
    for (std::size_t c = 0; c < channels; ++c) mean[c] += x[i + c];
  for (std::size_t c = 0; c < channels; ++c) mean[c] /= static_cast<T>(group);
  for (std::size_t i = 0; i < input.size(); i += channels)
    for (std::size_t c = 0; c < channels; ++c) {
      const T d = x[i + c] - mean[c];
      var[c] += d * d;
    }
  for (std::size_t c = 0; c < channels; ++c) var[c] /= static_cast<T>(group);

  std::vector<T> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c)
    inv_std[c] = T(1) / std::sqrt(var[c] + bn.epsilon);

  Tensor<T> normalized(input.shape());
  T* xn = normalized.data();
  for (std::size_t i = 0; i < input.size(); i += channels)
    for (std::size_t c = 0; c < channels; ++c)
      xn[i + c] = (x[i + c] - mean[c]) * inv_std[c];

  for (std::size_t c = 0; c < channels; ++c) {
    bn.running_mean[c] = bn.momentum * bn.running_mean[c] +
                         (T(1) - bn.momentum) * mean[c];
    bn.running_var[c] =
        bn.momentum * bn.running_var[c] + (T(1) - bn.momentum) * var[c];
  }

  Tensor<T> output(input.shape());
  T* y = output.data();
  for (std::size_t i = 0; i < input.size(); i += channels)
    for (std::size_t c = 0; c < channels; ++c)
      y[i + c] = bn.scale[c] * xn[i + c] + bn.shift[c];
  ensure_finite(output, "batch norm output");
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->group_size = group;
  }
  return output;
}

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& input, const BatchNorm<T>& bn) {
  detail2::check_bn_input(input, bn);
  const std::size_t channels = static_cast<std::size_t>(bn.channels);
  std::vector<T> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c)
    inv_std[c] = T(1) / std::sqrt(bn.running_var[c] + bn.epsilon);
  Tensor<T> output(input.shape());
  const T* x = input.data();
  T* y = output.data();
  for (std::size_t i = 0; i < input.size(); i += channels)
    for (std::size_t c = 0; c < channels; ++c)
      y[i + c] =
          bn.scale[c] * (x[i + c] - bn.running_mean[c]) * inv_std[c] +
          bn.shift[c];
  ensure_finite(output, "batch norm output");
  return output;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNorm<T>& bn, Mode mode,
                    BatchNormCache<T>* cache = nullptr) {
  return mode == Mode::kTrain ? batchnorm_train(input, bn, cache)
                              : batchnorm_infer(input, bn);
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> scale;
  Tensor<T> shift;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out,
                                     const BatchNorm<T>& bn,
                                     const BatchNormCache<T>& cache) {
  const std::size_t channels = static_cast<std::size_t>(bn.channels);
  detail::require(grad_out.size() == cache.normalized.size(),
                  "batch norm backward: gradient shape mismatch");
  const std::size_t group = cache.group_size;
  BatchNormGrads<T> grads;
  grads.scale = Tensor<T>({channels});
  grads.shift = Tensor<T>({channels});
  grads.input = Tensor<T>(grad_out.shape());

  const T* g = grad_out.data();
  const T* xn = cache.normalized.data();
  for (std::size_t i = 0; i < grad_out.size(); i += channels)
    for (std::size_t c = 0; c < channels; ++c) {
      grads.shift[c] += g[i + c];
      grads.scale[c] += g[i + c] * xn[i + c];
    }

  // dX = scale * inv_std / m * (m * dY - sum(dY) - xn * sum(dY * xn))
  T* gin = grads.input.data();
  const T m = static_cast<T>(group);
  for (std::size_t i = 0; i < grad_out.size(); i += channels)
    for (std::size_t c = 0; c < channels; ++c) {
      const T k = bn.scale[c] * cache.inv_std[c] / m;
      gin[i + c] =
          k * (m * g[i + c] - grads.shift[c] - xn[i + c] * grads.scale[c]);
    }
  ensure_finite(grads.input, "batch norm input gradient");
  return grads;
}

// ---------------------------------------------------------------------------
// Activation, loss, optimizer step.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> output(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i)
    output[i] = input[i] > T(0) ? input[i] : T(0);
  ensure_finite(output, "relu output");
  return output;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input) {
  detail::require(grad_out.same_shape(input),
                  "relu_backward: shape mismatch");
  Tensor<T> grads(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i)
    grads[i] = input[i] > T(0) ? grad_out[i] : T(0);
  return grads;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  detail::require(logits.rank() == 2, "softmax: logits must be [N, C]");
  const std::size_t n_batch = logits.dim(0), classes = logits.dim(1);
  Tensor<T> probs(logits.shape());
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* row = logits.data() + n * classes;
    T* out = probs.data() + n * classes;
    T top = row[0];
    for (std::size_t c = 1; c < classes; ++c) top = std::max(top, row[c]);
    T total = T(0);
    for (std::size_t c = 0; c < classes; ++c) {
      out[c] = std::exp(row[c] - top);
      total += out[c];
    }
    for (std::size_t c = 0; c < classes; ++c) out[c] /= total;
  }
  ensure_finite(probs, "softmax output");
  return probs;
}

template <typename T>
struct SoftmaxLoss {
  T loss = T(0);
  Tensor<T> grad_logits;
};

// Mean negative log-likelihood over the batch; gradient is
// (softmax - onehot) / batch.
template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(const Tensor<T>& logits,
                                     const std::vector<int>& labels) {
  detail::require(logits.rank() == 2 && logits.dim(1) >= 2,
                  "softmax_cross_entropy: logits must be [N, C], C >= 2");
  const std::size_t n_batch = logits.dim(0), classes = logits.dim(1);
  detail::require(labels.size() == n_batch,
                  "softmax_cross_entropy: label count mismatch");
  for (int label : labels)
    detail::require(label >= 0 && label < static_cast<int>(classes),
                    "softmax_cross_entropy: label out of range");

  SoftmaxLoss<T> result;
  result.grad_logits = softmax(logits);
  T total = T(0);
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* row = logits.data() + n * classes;
    T top = row[0];
    for (std::size_t c = 1; c < classes; ++c) top = std::max(top, row[c]);
    T lse = T(0);
    for (std::size_t c = 0; c < classes; ++c) lse += std::exp(row[c] - top);
    lse = std::log(lse) + top;
    total += lse - row[labels[n]];
  }
  result.loss = total / static_cast<T>(n_batch);

  T* g = result.grad_logits.data();
  const T inv_n = T(1) / static_cast<T>(n_batch);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < classes; ++c) g[n * classes + c] *= inv_n;
    g[n * classes + static_cast<std::size_t>(labels[n])] -= inv_n;
  }
  return result;
}

template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, T learning_rate) {
  detail::require(param.same_shape(grad), "sgd_step: shape mismatch");
  detail::require(learning_rate > T(0), "sgd_step: learning rate must be > 0");
  for (std::size_t i = 0; i < param.size(); ++i)
    param[i] -= learning_rate * grad[i];
}

}  // namespace affnet::nn
