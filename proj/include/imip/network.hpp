#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "imip/activations.hpp"
#include "imip/binio.hpp"
#include "imip/conv.hpp"
#include "imip/rng.hpp"
#include "imip/tensor.hpp"

namespace imip {

// Architecture description. The detector is a plain stack of 3x3 stride-1
// conv layers with leaky ReLU between them and a sigmoid at the end; depth
// and channel plan are the only structural knobs.
struct NetworkConfig {
  int n_channels = 128;  // output channels; the number of interest points
  int depth = 14;        // conv layers
  int channels_first_half = 64;
  int channels_second_half = 128;
  double leaky_slope = 0.1;
  std::uint64_t seed = 0;

  // The published channel plans: n in {64, 128} keeps intermediates at
  // (64, 128); n = 256 doubles them to (128, 256).
  static NetworkConfig standard(int n = 128, std::uint64_t seed = 0) {
    require(n >= 1, "need at least one output channel");
    NetworkConfig c;
    c.n_channels = n;
    c.seed = seed;
    if (n >= 256) {
      c.channels_first_half = 128;
      c.channels_second_half = 256;
    }
    return c;
  }

  bool operator==(const NetworkConfig&) const = default;
};

// Patch side length that influences a single output pixel. Each 3x3 valid
// conv trims one pixel per side.
inline int receptive_field(const NetworkConfig& cfg) {
  require(cfg.depth >= 1, "depth must be at least 1");
  return 1 + 2 * cfg.depth;
}

// Output channel count per layer: first half of the stack at
// channels_first_half, the rest at channels_second_half, final layer at
// n_channels.
inline std::vector<int> layer_output_channels(const NetworkConfig& cfg) {
  require(cfg.depth >= 1, "depth must be at least 1");
  require(cfg.n_channels >= 1 && cfg.channels_first_half >= 1 &&
              cfg.channels_second_half >= 1,
          "channel counts must be positive");
  std::vector<int> out(std::size_t(cfg.depth));
  const int half = cfg.depth / 2;
  for (int l = 0; l < cfg.depth; ++l)
    out[std::size_t(l)] =
        l < half ? cfg.channels_first_half : cfg.channels_second_half;
  out[std::size_t(cfg.depth - 1)] = cfg.n_channels;
  return out;
}

template <typename S>
struct NetworkParams {
  NetworkConfig config;
  std::vector<ConvLayerParams<S>> layers;

  bool operator==(const NetworkParams&) const = default;

  template <typename T>
  NetworkParams<T> cast() const {
    NetworkParams<T> out;
    out.config = config;
    out.layers.reserve(layers.size());
    for (const auto& l : layers) out.layers.push_back(l.template cast<T>());
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.kernels.size() + l.bias.size();
    return n;
  }
};

// Fan-in-scaled Gaussian weights (std = sqrt(2 / fan_in)), zero biases.
// Bit-reproducible for a fixed config.seed.
template <typename S = float>
inline NetworkParams<S> init_weights(const NetworkConfig& cfg) {
  NetworkParams<S> net;
  net.config = cfg;
  Rng rng(cfg.seed);
  int c_in = 1;
  for (const int c_out : layer_output_channels(cfg)) {
    ConvLayerParams<S> layer(c_in, c_out);
    const double std_dev = std::sqrt(2.0 / (9.0 * c_in));
    for (auto& w : layer.kernels) w = S(std_dev * rng.normal());
    net.layers.push_back(std::move(layer));
    c_in = c_out;
  }
  return net;
}

// Full-resolution response stack: zero-padded convolutions keep H x W at
// every layer, sigmoid maps the last layer into (0,1). Images narrower than
// the receptive field are rejected so extraction margins stay meaningful.
template <typename S>
inline Tensor4<S> forward_full(const Tensor4<S>& image,
                               const NetworkParams<S>& net) {
  require(image.shape.c == 1, "expected single-channel input");
  const int r = receptive_field(net.config);
  require(image.shape.h >= r && image.shape.w >= r,
          "image smaller than the receptive field");
  Tensor4<S> x = image;
  const S slope = S(net.config.leaky_slope);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    x = conv2d_forward(x, net.layers[l], Padding::kZeroSame);
    x = l + 1 < net.layers.size() ? leaky_relu(x, slope) : sigmoid(x);
  }
  return x;
}

// Layer inputs captured by the patch forward pass, enough to replay the
// chain rule without re-running convolutions.
template <typename S>
struct PatchTape {
  std::vector<Tensor4<S>> inputs;  // inputs[l] feeds conv layer l
  Tensor4<S> output;               // post-sigmoid [m,1,1,n]
};

// Patch-batch forward with valid padding: [m,r,r,1] -> [m,1,1,n]. Keeping
// the tape is optional; training passes one, inference passes nullptr.
template <typename S>
inline Tensor4<S> forward_patches(const Tensor4<S>& patches,
                                  const NetworkParams<S>& net,
                                  PatchTape<S>* tape = nullptr) {
  const int r = receptive_field(net.config);
  require(patches.shape.c == 1, "expected single-channel patches");
  require(patches.shape.h == r && patches.shape.w == r,
          "patch spatial dims must equal the receptive field " +
              std::to_string(r));
  if (tape) {
    tape->inputs.clear();
    tape->inputs.reserve(net.layers.size());
  }
  Tensor4<S> x = patches;
  const S slope = S(net.config.leaky_slope);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (tape) tape->inputs.push_back(x);
    x = conv2d_forward(x, net.layers[l], Padding::kValid);
    x = l + 1 < net.layers.size() ? leaky_relu(x, slope) : sigmoid(x);
  }
  if (tape) tape->output = x;
  return x;
}

// Parameter gradients for every layer, same shapes as NetworkParams.layers.
template <typename S>
using NetworkGrads = std::vector<ConvLayerParams<S>>;

template <typename S>
inline NetworkGrads<S> zero_grads(const NetworkParams<S>& net) {
  NetworkGrads<S> g;
  g.reserve(net.layers.size());
  for (const auto& l : net.layers) g.emplace_back(l.c_in, l.c_out);
  return g;
}

// Backpropagates dL/d output through the recorded patch forward pass and
// accumulates parameter gradients into `grads` (+=, so several batches can
// share one gradient buffer).
template <typename S>
inline void backward_patches(const NetworkParams<S>& net,
                             const PatchTape<S>& tape,
                             const Tensor4<S>& grad_output,
                             NetworkGrads<S>& grads) {
  require(grads.size() == net.layers.size(), "gradient buffer layout mismatch");
  require(tape.inputs.size() == net.layers.size(), "tape does not match net");
  require(grad_output.shape == tape.output.shape,
          "grad_output shape must match the forward output");

  const S slope = S(net.config.leaky_slope);
  Tensor4<S> g = sigmoid_grad_from_output(tape.output, grad_output);
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    ConvGrads<S> cg =
        conv2d_backward(tape.inputs[l], net.layers[l], g, Padding::kValid);
    ConvLayerParams<S>& acc = grads[l];
    for (std::size_t i = 0; i < acc.kernels.size(); ++i)
      acc.kernels[i] += cg.layer.kernels[i];
    for (std::size_t i = 0; i < acc.bias.size(); ++i)
      acc.bias[i] += cg.layer.bias[i];
    if (l > 0) {
      // tape.inputs[l] is the previous layer's activation output.
      g = leaky_relu_grad_from_output(tape.inputs[l], slope, cg.input);
    }
  }
}

// ---------------------------------------------------------------------------
// Parameter file
// ---------------------------------------------------------------------------
// Layout (little-endian):
//   magic "IMIP" | version u32 | n u32 | depth u32 | first_half u32 |
//   second_half u32 | leaky_slope f64 | seed u64 | scalar_width u32 |
//   input_norm u32 | crc32(payload) u32 | payload
// payload = per layer: kernels then bias, in layer order.

inline constexpr std::uint32_t kParamsFormatVersion = 1;
// input_norm records the pixel preprocessing baked into the weights:
// 0 = intensities scaled to [0,1], no mean subtraction.
inline constexpr std::uint32_t kInputNormUnitRange = 0;

template <typename S>
inline void save_params(const NetworkParams<S>& net, const std::string& path) {
  ByteWriter payload;
  for (const auto& layer : net.layers) {
    for (const S v : layer.kernels) {
      if constexpr (sizeof(S) == 4)
        payload.f32(float(v));
      else
        payload.f64(double(v));
    }
    for (const S v : layer.bias) {
      if constexpr (sizeof(S) == 4)
        payload.f32(float(v));
      else
        payload.f64(double(v));
    }
  }

  ByteWriter w;
  w.bytes("IMIP", 4);
  w.u32(kParamsFormatVersion);
  w.u32(std::uint32_t(net.config.n_channels));
  w.u32(std::uint32_t(net.config.depth));
  w.u32(std::uint32_t(net.config.channels_first_half));
  w.u32(std::uint32_t(net.config.channels_second_half));
  w.f64(net.config.leaky_slope);
  w.u64(net.config.seed);
  w.u32(sizeof(S));
  w.u32(kInputNormUnitRange);
  w.u32(crc32(payload.buf.data(), payload.buf.size()));
  w.bytes(payload.buf.data(), payload.buf.size());
  write_file_bytes(path, w.buf);
}

template <typename S = float>
inline NetworkParams<S> load_params(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  ByteReader r(bytes);

  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "IMIP")
    throw FormatError("not a detector parameter file: " + path);
  const std::uint32_t version = r.u32();
  if (version != kParamsFormatVersion)
    throw VersionError("unsupported parameter file version " +
                       std::to_string(version) + " in " + path);

  NetworkConfig cfg;
  cfg.n_channels = int(r.u32());
  cfg.depth = int(r.u32());
  cfg.channels_first_half = int(r.u32());
  cfg.channels_second_half = int(r.u32());
  cfg.leaky_slope = r.f64();
  cfg.seed = r.u64();
  const std::uint32_t scalar_width = r.u32();
  if (scalar_width != 4 && scalar_width != 8)
    throw FormatError("unsupported scalar width in " + path);
  const std::uint32_t input_norm = r.u32();
  if (input_norm != kInputNormUnitRange)
    throw FormatError("unsupported input normalization tag in " + path);
  const std::uint32_t stored_crc = r.u32();

  std::size_t scalar_count = 0;
  int c_in = 1;
  for (const int c_out : layer_output_channels(cfg)) {
    scalar_count += std::size_t(9 * c_in * c_out) + std::size_t(c_out);
    c_in = c_out;
  }
  if (r.remaining() < scalar_count * scalar_width)
    throw TruncationError("parameter file too short: " + path);
  if (r.remaining() > scalar_count * scalar_width)
    throw FormatError("parameter file has trailing bytes: " + path);
  if (crc32(bytes.data() + r.pos(), r.remaining()) != stored_crc)
    throw ChecksumError("parameter payload checksum mismatch: " + path);

  NetworkParams<S> net;
  net.config = cfg;
  auto read_scalar = [&]() -> S {
    return scalar_width == 4 ? S(r.f32()) : S(r.f64());
  };
  c_in = 1;
  for (const int c_out : layer_output_channels(cfg)) {
    ConvLayerParams<S> layer(c_in, c_out);
    for (auto& v : layer.kernels) v = read_scalar();
    for (auto& v : layer.bias) v = read_scalar();
    net.layers.push_back(std::move(layer));
    c_in = c_out;
  }
  return net;
}

}  // namespace imip
