#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "imip/parallel.hpp"
#include "imip/tensor.hpp"

namespace imip {

// One detection. The channel that produced it doubles as its match identity;
// no descriptor exists or is needed.
struct InterestPoint {
  int channel = 0;
  int x = 0, y = 0;
  double response = 0;
};

// Exactly one point per channel, index == channel.
struct InterestPointSet {
  std::vector<InterestPoint> points;
  int n() const { return int(points.size()); }
};

// Global per-channel argmax over the margin-excluded region. Ties break to
// the smallest row, then smallest column, so extraction is deterministic.
template <typename S>
inline InterestPointSet extract_points(const Tensor4<S>& stack, int margin) {
  require(stack.shape.b == 1, "expected a single response stack");
  require(margin >= 0, "margin must be non-negative");
  const int h = int(stack.shape.h), w = int(stack.shape.w);
  const int n = int(stack.shape.c);
  require(2 * margin < std::min(h, w), "margin leaves no pixels to scan");

  InterestPointSet set;
  set.points.resize(std::size_t(n));
  parallel_for(0, n, [&](int c) {
    InterestPoint best;
    best.channel = c;
    best.x = margin;
    best.y = margin;
    best.response = double(stack.at(0, margin, margin, c));
    for (int y = margin; y < h - margin; ++y)
      for (int x = margin; x < w - margin; ++x) {
        const double r = double(stack.at(0, y, x, c));
        if (r > best.response) {
          best.response = r;
          best.x = x;
          best.y = y;
        }
      }
    set.points[std::size_t(c)] = best;
  });
  return set;
}

struct MatchPair {
  InterestPoint a, b;  // same channel by construction
};

struct MatchSet {
  std::vector<MatchPair> pairs;
  int n() const { return int(pairs.size()); }
};

// Channel i of one image pairs with channel i of the other. No search and
// no scores; the channel index is the whole matching rule.
inline MatchSet match_by_channel(const InterestPointSet& a,
                                 const InterestPointSet& b) {
  require(a.n() == b.n(), "channel counts differ between point sets");
  MatchSet m;
  m.pairs.resize(std::size_t(a.n()));
  for (int i = 0; i < a.n(); ++i)
    m.pairs[std::size_t(i)] = {a.points[std::size_t(i)],
                               b.points[std::size_t(i)]};
  return m;
}

// 3 bytes per point: 12-bit x then 12-bit y, most significant bits first.
// Covers coordinates up to 4096 in each axis.
inline std::vector<std::uint8_t> pack_coordinates(const InterestPointSet& set) {
  std::vector<std::uint8_t> out;
  out.reserve(std::size_t(set.n()) * 3);
  for (const auto& p : set.points) {
    require(p.x >= 0 && p.x < 4096 && p.y >= 0 && p.y < 4096,
            "coordinate exceeds the 12-bit range");
    const unsigned x = unsigned(p.x), y = unsigned(p.y);
    out.push_back(std::uint8_t(x >> 4));
    out.push_back(std::uint8_t(((x & 0xF) << 4) | (y >> 8)));
    out.push_back(std::uint8_t(y & 0xFF));
  }
  return out;
}

inline std::vector<std::array<int, 2>> unpack_coordinates(
    const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() % 3 == 0, "packed length must be a multiple of 3");
  std::vector<std::array<int, 2>> out(bytes.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const unsigned b0 = bytes[3 * i], b1 = bytes[3 * i + 1],
                   b2 = bytes[3 * i + 2];
    out[i] = {int((b0 << 4) | (b1 >> 4)), int(((b1 & 0xF) << 8) | b2)};
  }
  return out;
}

}  // namespace imip
