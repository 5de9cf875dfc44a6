#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "imip/conv.hpp"
#include "imip/gradcheck.hpp"
#include "imip/rng.hpp"

using namespace imip;

namespace {

// Independent reference: iterates kernel taps around each output pixel and
// treats out-of-image taps as zero. Shares no code with the implementation.
Tensor4<double> conv_reference(const Tensor4<double>& in,
                               const ConvLayerParams<double>& p,
                               Padding padding) {
  const std::int64_t pad = padding == Padding::kZeroSame ? 1 : 0;
  const std::int64_t oh = padding == Padding::kZeroSame ? in.shape.h
                                                        : in.shape.h - 2;
  const std::int64_t ow = padding == Padding::kZeroSame ? in.shape.w
                                                        : in.shape.w - 2;
  Tensor4<double> out(in.shape.b, oh, ow, p.c_out);
  for (std::int64_t b = 0; b < in.shape.b; ++b)
    for (std::int64_t co = 0; co < p.c_out; ++co)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = double(p.bias[std::size_t(co)]);
          for (std::int64_t ky = 0; ky < 3; ++ky)
            for (std::int64_t kx = 0; kx < 3; ++kx) {
              const std::int64_t iy = oy + ky - pad;
              const std::int64_t ix = ox + kx - pad;
              if (iy < 0 || ix < 0 || iy >= in.shape.h || ix >= in.shape.w)
                continue;
              for (std::int64_t ci = 0; ci < p.c_in; ++ci)
                acc += double(in.at(b, iy, ix, ci)) * double(p.k(ky, kx, ci, co));
            }
          out.at(b, oy, ox, co) = acc;
        }
  return out;
}

ConvLayerParams<double> random_layer(std::int64_t ci, std::int64_t co,
                                     std::uint64_t seed) {
  ConvLayerParams<double> p(ci, co);
  Rng rng(seed);
  for (auto& v : p.kernels) v = rng.uniform(-1.0, 1.0);
  for (auto& v : p.bias) v = rng.uniform(-0.5, 0.5);
  return p;
}

Tensor4<double> random_tensor(Shape4 s, std::uint64_t seed) {
  Tensor4<double> t(s);
  Rng rng(seed);
  for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("forward matches an independent reference", "[conv]") {
  for (const Padding pad : {Padding::kValid, Padding::kZeroSame}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const auto layer = random_layer(3, 4, seed);
      const auto in = random_tensor({2, 6, 5, 3}, seed + 100);
      const auto got = conv2d_forward(in, layer, pad);
      const auto want = conv_reference(in, layer, pad);
      REQUIRE(got.shape == want.shape);
      for (std::size_t i = 0; i < got.data.size(); ++i)
        REQUIRE(got.data[i] == Catch::Approx(want.data[i]).margin(1e-12));
    }
  }
}

TEST_CASE("valid output loses a 1-pixel rim, zero-same keeps size", "[conv]") {
  const auto layer = random_layer(1, 2, 5);
  const auto in = random_tensor({1, 7, 9, 1}, 6);
  CHECK(conv2d_forward(in, layer, Padding::kValid).shape ==
        Shape4{1, 5, 7, 2});
  CHECK(conv2d_forward(in, layer, Padding::kZeroSame).shape ==
        Shape4{1, 7, 9, 2});
}

TEST_CASE("undersized inputs are rejected for valid convs", "[conv]") {
  const auto layer = random_layer(1, 1, 7);
  CHECK_THROWS(conv2d_forward(Tensor4<double>(1, 2, 5, 1), layer,
                              Padding::kValid));
  CHECK_THROWS(conv2d_forward(Tensor4<double>(1, 5, 5, 2), layer,
                              Padding::kValid));
}

TEST_CASE("forward is linear in the input at zero bias", "[conv]") {
  auto layer = random_layer(2, 3, 9);
  for (auto& b : layer.bias) b = 0.0;
  const auto x = random_tensor({1, 5, 5, 2}, 10);
  const auto y = random_tensor({1, 5, 5, 2}, 11);
  Tensor4<double> xy(x.shape);
  for (std::size_t i = 0; i < xy.data.size(); ++i)
    xy.data[i] = 2.0 * x.data[i] - 0.5 * y.data[i];
  const auto fx = conv2d_forward(x, layer, Padding::kZeroSame);
  const auto fy = conv2d_forward(y, layer, Padding::kZeroSame);
  const auto fxy = conv2d_forward(xy, layer, Padding::kZeroSame);
  for (std::size_t i = 0; i < fxy.data.size(); ++i)
    REQUIRE(fxy.data[i] ==
            Catch::Approx(2.0 * fx.data[i] - 0.5 * fy.data[i]).margin(1e-12));
}

TEST_CASE("input gradient is the exact adjoint of the forward map", "[conv]") {
  // <u, J v> == <J^T u, v> for the linearized (zero-bias) map.
  for (const Padding pad : {Padding::kValid, Padding::kZeroSame}) {
    auto layer = random_layer(2, 3, 21);
    for (auto& b : layer.bias) b = 0.0;
    const Shape4 in_shape{1, 6, 7, 2};
    const auto v = random_tensor(in_shape, 22);
    const auto jv = conv2d_forward(v, layer, pad);
    const auto u = random_tensor(jv.shape, 23);
    const auto grads = conv2d_backward(v, layer, u, pad);
    const double lhs = dot(u.data, jv.data);
    const double rhs = dot(grads.input.data, v.data);
    REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("kernel and bias gradients pass finite differences", "[conv]") {
  for (const Padding pad : {Padding::kValid, Padding::kZeroSame}) {
    const auto layer0 = random_layer(2, 2, 31);
    const auto in = random_tensor({1, 5, 6, 2}, 32);
    const auto weights = random_tensor(
        conv2d_forward(in, layer0, pad).shape, 33);

    // Scalar objective: weighted sum of all outputs.
    const auto objective = [&](const std::vector<double>& theta) {
      ConvLayerParams<double> l = layer0;
      std::size_t k = 0;
      for (auto& v : l.kernels) v = theta[k++];
      for (auto& v : l.bias) v = theta[k++];
      const auto out = conv2d_forward(in, l, pad);
      return dot(out.data, weights.data);
    };

    std::vector<double> theta;
    theta.insert(theta.end(), layer0.kernels.begin(), layer0.kernels.end());
    theta.insert(theta.end(), layer0.bias.begin(), layer0.bias.end());

    const auto grads = conv2d_backward(in, layer0, weights, pad);
    std::vector<double> analytic;
    analytic.insert(analytic.end(), grads.layer.kernels.begin(),
                    grads.layer.kernels.end());
    analytic.insert(analytic.end(), grads.layer.bias.begin(),
                    grads.layer.bias.end());

    CHECK(finite_difference_check(objective, theta, analytic, 1e-6) < 1e-6);
  }
}

TEST_CASE("input gradient passes finite differences", "[conv]") {
  const auto layer = random_layer(2, 3, 41);
  const auto in0 = random_tensor({1, 5, 5, 2}, 42);
  const auto weights =
      random_tensor(conv2d_forward(in0, layer, Padding::kZeroSame).shape, 43);

  const auto objective = [&](const std::vector<double>& flat) {
    Tensor4<double> in = in0;
    in.data = flat;
    const auto out = conv2d_forward(in, layer, Padding::kZeroSame);
    return dot(out.data, weights.data);
  };

  const auto grads = conv2d_backward(in0, layer, weights, Padding::kZeroSame);
  CHECK(finite_difference_check(objective, in0.data, grads.input.data, 1e-6) <
        1e-6);
}

TEST_CASE("zero-same equals valid on an explicitly padded input", "[conv]") {
  const auto layer = random_layer(2, 2, 51);
  const auto in = random_tensor({1, 6, 8, 2}, 52);
  Tensor4<double> padded(1, 8, 10, 2, 0.0);
  for (std::int64_t y = 0; y < 6; ++y)
    for (std::int64_t x = 0; x < 8; ++x)
      for (std::int64_t c = 0; c < 2; ++c)
        padded.at(0, y + 1, x + 1, c) = in.at(0, y, x, c);
  const auto same = conv2d_forward(in, layer, Padding::kZeroSame);
  const auto valid = conv2d_forward(padded, layer, Padding::kValid);
  REQUIRE(same.shape == valid.shape);
  for (std::size_t i = 0; i < same.data.size(); ++i)
    REQUIRE(same.data[i] == valid.data[i]);  // bitwise: same tap order
}

TEST_CASE("forward output is bit-reproducible across calls", "[conv]") {
  const auto layer = random_layer(3, 5, 61);
  const auto in = random_tensor({1, 32, 40, 3}, 62);
  const auto a = conv2d_forward(in, layer, Padding::kZeroSame);
  const auto b = conv2d_forward(in, layer, Padding::kZeroSame);
  REQUIRE(a == b);
}
