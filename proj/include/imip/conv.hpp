#pragma once

#include <cstdint>
#include <vector>

#include "imip/parallel.hpp"
#include "imip/tensor.hpp"

namespace imip {

enum class Padding {
  kValid,     // output (H-2) x (W-2)
  kZeroSame,  // zero padding of width 1, output H x W
};

// One 3x3 convolution layer. Kernel layout is [ky][kx][c_in][c_out] with
// c_out fastest, so the inner accumulation loop runs over contiguous memory
// in both the kernel and the output channel vector.
template <typename S>
struct ConvLayerParams {
  static constexpr std::int64_t kKernel = 3;

  std::int64_t c_in = 0, c_out = 0;
  std::vector<S> kernels;  // 3*3*c_in*c_out
  std::vector<S> bias;     // c_out

  ConvLayerParams() = default;
  ConvLayerParams(std::int64_t ci, std::int64_t co)
      : c_in(ci),
        c_out(co),
        kernels(std::size_t(kKernel * kKernel * ci * co), S(0)),
        bias(std::size_t(co), S(0)) {}

  S& k(std::int64_t ky, std::int64_t kx, std::int64_t ci, std::int64_t co) {
    return kernels[std::size_t(((ky * kKernel + kx) * c_in + ci) * c_out + co)];
  }
  const S& k(std::int64_t ky, std::int64_t kx, std::int64_t ci,
             std::int64_t co) const {
    return kernels[std::size_t(((ky * kKernel + kx) * c_in + ci) * c_out + co)];
  }

  bool operator==(const ConvLayerParams&) const = default;

  template <typename T>
  ConvLayerParams<T> cast() const {
    ConvLayerParams<T> out(c_in, c_out);
    for (std::size_t i = 0; i < kernels.size(); ++i) out.kernels[i] = T(kernels[i]);
    for (std::size_t i = 0; i < bias.size(); ++i) out.bias[i] = T(bias[i]);
    return out;
  }
};

namespace detail {

inline std::int64_t conv_out_dim(std::int64_t in, Padding p) {
  return p == Padding::kValid ? in - 2 : in;
}

}  // namespace detail

// Stride-1 cross-correlation plus bias. Summation order per output element is
// fixed (ky, kx, c_in, c_out), independent of how rows are scheduled across
// threads, so results are bitwise reproducible for any thread count.
template <typename S>
Tensor4<S> conv2d_forward(const Tensor4<S>& input,
                          const ConvLayerParams<S>& params, Padding padding) {
  require(input.shape.c == params.c_in,
          "conv2d_forward: input channels " + std::to_string(input.shape.c) +
              " != layer c_in " + std::to_string(params.c_in));
  if (padding == Padding::kValid)
    require(input.shape.h >= 3 && input.shape.w >= 3,
            "conv2d_forward: valid padding needs spatial dims >= 3, got " +
                input.shape.str());

  const std::int64_t B = input.shape.b;
  const std::int64_t H = input.shape.h, W = input.shape.w;
  const std::int64_t OH = detail::conv_out_dim(H, padding);
  const std::int64_t OW = detail::conv_out_dim(W, padding);
  const std::int64_t ci_n = params.c_in, co_n = params.c_out;
  // Offset from output coordinate to topmost/leftmost input tap.
  const std::int64_t off = padding == Padding::kValid ? 0 : -1;

  Tensor4<S> out(B, OH, OW, co_n);
  if (out.size() == 0) return out;

  const S* kern = params.kernels.data();
  const S* bias = params.bias.data();

  parallel_for(0, B * OH, [&](std::int64_t job) {
    const std::int64_t ib = job / OH;
    const std::int64_t oy = job % OH;
    std::vector<S> acc(static_cast<std::size_t>(co_n));
    for (std::int64_t ox = 0; ox < OW; ++ox) {
      for (std::int64_t co = 0; co < co_n; ++co) acc[std::size_t(co)] = bias[co];
      for (std::int64_t ky = 0; ky < 3; ++ky) {
        const std::int64_t iy = oy + ky + off;
        if (iy < 0 || iy >= H) continue;
        for (std::int64_t kx = 0; kx < 3; ++kx) {
          const std::int64_t ix = ox + kx + off;
          if (ix < 0 || ix >= W) continue;
          const S* in = input.chan(ib, iy, ix);
          const S* kk = kern + (ky * 3 + kx) * ci_n * co_n;
          for (std::int64_t ci = 0; ci < ci_n; ++ci) {
            const S v = in[ci];
            const S* kr = kk + ci * co_n;
            for (std::int64_t co = 0; co < co_n; ++co)
              acc[std::size_t(co)] += v * kr[co];
          }
        }
      }
      S* dst = out.chan(ib, oy, ox);
      for (std::int64_t co = 0; co < co_n; ++co) dst[co] = acc[std::size_t(co)];
    }
  });
  return out;
}

template <typename S>
struct ConvGrads {
  Tensor4<S> input;          // dL/d input
  ConvLayerParams<S> layer;  // dL/d kernels, dL/d bias
};

// Exact gradients of conv2d_forward. grad_input is parallel over rows (one
// writer per element); kernel gradients are parallel over the 9 taps so each
// (ky,kx,ci,co) cell is accumulated by a single thread in fixed order.
template <typename S>
ConvGrads<S> conv2d_backward(const Tensor4<S>& input,
                             const ConvLayerParams<S>& params,
                             const Tensor4<S>& upstream, Padding padding) {
  require(input.shape.c == params.c_in, "conv2d_backward: input channel mismatch");
  const std::int64_t B = input.shape.b;
  const std::int64_t H = input.shape.h, W = input.shape.w;
  const std::int64_t OH = detail::conv_out_dim(H, padding);
  const std::int64_t OW = detail::conv_out_dim(W, padding);
  require(upstream.shape == Shape4{B, OH, OW, params.c_out},
          "conv2d_backward: upstream shape " + upstream.shape.str() +
              " does not match forward output");

  const std::int64_t ci_n = params.c_in, co_n = params.c_out;
  const std::int64_t off = padding == Padding::kValid ? 0 : -1;

  ConvGrads<S> g;
  g.input = Tensor4<S>(input.shape);
  g.layer = ConvLayerParams<S>(ci_n, co_n);
  if (upstream.size() == 0) return g;

  const S* kern = params.kernels.data();

  // dL/d input: for each input cell, gather contributions from the output
  // positions whose window covers it.
  parallel_for(0, B * H, [&](std::int64_t job) {
    const std::int64_t ib = job / H;
    const std::int64_t iy = job % H;
    for (std::int64_t ix = 0; ix < W; ++ix) {
      S* gin = g.input.chan(ib, iy, ix);
      for (std::int64_t ky = 0; ky < 3; ++ky) {
        const std::int64_t oy = iy - ky - off;
        if (oy < 0 || oy >= OH) continue;
        for (std::int64_t kx = 0; kx < 3; ++kx) {
          const std::int64_t ox = ix - kx - off;
          if (ox < 0 || ox >= OW) continue;
          const S* up = upstream.chan(ib, oy, ox);
          const S* kk = kern + (ky * 3 + kx) * ci_n * co_n;
          for (std::int64_t ci = 0; ci < ci_n; ++ci) {
            const S* kr = kk + ci * co_n;
            S acc = S(0);
            for (std::int64_t co = 0; co < co_n; ++co) acc += kr[co] * up[co];
            gin[ci] += acc;
          }
        }
      }
    }
  });

  // dL/d kernels: one task per (ky,kx) tap.
  S* gk = g.layer.kernels.data();
  parallel_for(
      0, 9,
      [&](std::int64_t tap) {
        const std::int64_t ky = tap / 3, kx = tap % 3;
        S* gtap = gk + tap * ci_n * co_n;
        for (std::int64_t ib = 0; ib < B; ++ib)
          for (std::int64_t oy = 0; oy < OH; ++oy) {
            const std::int64_t iy = oy + ky + off;
            if (iy < 0 || iy >= H) continue;
            for (std::int64_t ox = 0; ox < OW; ++ox) {
              const std::int64_t ix = ox + kx + off;
              if (ix < 0 || ix >= W) continue;
              const S* in = input.chan(ib, iy, ix);
              const S* up = upstream.chan(ib, oy, ox);
              for (std::int64_t ci = 0; ci < ci_n; ++ci) {
                const S v = in[ci];
                S* dst = gtap + ci * co_n;
                for (std::int64_t co = 0; co < co_n; ++co) dst[co] += v * up[co];
              }
            }
          }
      },
      /*min_parallel=*/4);

  // dL/d bias: plain sum over batch and space per output channel.
  for (std::int64_t ib = 0; ib < B; ++ib)
    for (std::int64_t oy = 0; oy < OH; ++oy)
      for (std::int64_t ox = 0; ox < OW; ++ox) {
        const S* up = upstream.chan(ib, oy, ox);
        for (std::int64_t co = 0; co < co_n; ++co) g.layer.bias[std::size_t(co)] += up[co];
      }

  return g;
}

}  // namespace imip
