#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace imip {

struct Shape4 {
  std::int64_t b = 0, h = 0, w = 0, c = 0;

  std::int64_t count() const { return b * h * w * c; }
  bool operator==(const Shape4&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "[" << b << "," << h << "," << w << "," << c << "]";
    return os.str();
  }
};

// Dense row-major [batch, height, width, channels] tensor. Channels are the
// fastest-varying axis, so per-pixel channel vectors are contiguous.
template <typename S>
struct Tensor4 {
  using value_type = S;

  Shape4 shape;
  std::vector<S> data;

  Tensor4() = default;
  Tensor4(std::int64_t b, std::int64_t h, std::int64_t w, std::int64_t c,
          S fill = S(0))
      : shape{b, h, w, c}, data(std::size_t(b * h * w * c), fill) {}
  explicit Tensor4(Shape4 s, S fill = S(0))
      : shape(s), data(std::size_t(s.count()), fill) {}

  std::int64_t size() const { return std::int64_t(data.size()); }

  std::int64_t index(std::int64_t ib, std::int64_t iy, std::int64_t ix,
                     std::int64_t ic) const {
    return ((ib * shape.h + iy) * shape.w + ix) * shape.c + ic;
  }

  S& at(std::int64_t ib, std::int64_t iy, std::int64_t ix, std::int64_t ic) {
    return data[std::size_t(index(ib, iy, ix, ic))];
  }
  const S& at(std::int64_t ib, std::int64_t iy, std::int64_t ix,
              std::int64_t ic) const {
    return data[std::size_t(index(ib, iy, ix, ic))];
  }

  // Pointer to the channel vector at one spatial location.
  S* chan(std::int64_t ib, std::int64_t iy, std::int64_t ix) {
    return data.data() + index(ib, iy, ix, 0);
  }
  const S* chan(std::int64_t ib, std::int64_t iy, std::int64_t ix) const {
    return data.data() + index(ib, iy, ix, 0);
  }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (const S& v : data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  bool operator==(const Tensor4&) const = default;

  template <typename T>
  Tensor4<T> cast() const {
    Tensor4<T> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = T(data[i]);
    return out;
  }
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace imip
