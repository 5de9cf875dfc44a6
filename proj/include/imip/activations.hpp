#pragma once

#include <cmath>

#include "imip/tensor.hpp"

namespace imip {

// x for x > 0, slope*x otherwise. Monotone non-decreasing for slope in (0,1).
template <typename S>
Tensor4<S> leaky_relu(const Tensor4<S>& x, S slope) {
  require(slope > S(0) && slope < S(1), "leaky_relu: slope must be in (0,1)");
  Tensor4<S> out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const S v = x.data[i];
    out.data[i] = v > S(0) ? v : slope * v;
  }
  return out;
}

// Derivative as a function of the activation OUTPUT. Valid because the map is
// sign-preserving; the value at exactly 0 is defined as the slope.
template <typename S>
Tensor4<S> leaky_relu_grad_from_output(const Tensor4<S>& y, S slope,
                                       const Tensor4<S>& upstream) {
  require(y.shape == upstream.shape, "leaky_relu grad: shape mismatch");
  Tensor4<S> out(y.shape);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    out.data[i] = upstream.data[i] * (y.data[i] > S(0) ? S(1) : slope);
  return out;
}

template <typename S>
S sigmoid_scalar(S x) {
  // Split on sign so exp never overflows.
  if (x >= S(0)) {
    const S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  const S e = std::exp(x);
  return e / (S(1) + e);
}

// 1/(1+exp(-x)) elementwise; output strictly inside (0,1) for finite input.
template <typename S>
Tensor4<S> sigmoid(const Tensor4<S>& x) {
  Tensor4<S> out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    out.data[i] = sigmoid_scalar(x.data[i]);
  return out;
}

// d sigmoid / dx = y*(1-y), expressed through the output.
template <typename S>
Tensor4<S> sigmoid_grad_from_output(const Tensor4<S>& y,
                                    const Tensor4<S>& upstream) {
  require(y.shape == upstream.shape, "sigmoid grad: shape mismatch");
  Tensor4<S> out(y.shape);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    out.data[i] = upstream.data[i] * y.data[i] * (S(1) - y.data[i]);
  return out;
}

}  // namespace imip
