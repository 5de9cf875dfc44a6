#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "imip/binio.hpp"
#include "imip/tensor.hpp"

namespace imip {

// Grayscale raster, row-major, intensities nominally in [0, 1].
template <typename S>
struct Image {
  int width = 0;
  int height = 0;
  std::vector<S> data;

  Image() = default;
  Image(int w, int h, S fill = S(0)) : width(w), height(h) {
    require(w > 0 && h > 0, "image dimensions must be positive");
    data.assign(std::size_t(w) * std::size_t(h), fill);
  }

  S& at(int x, int y) { return data[std::size_t(y) * width + x]; }
  const S& at(int x, int y) const { return data[std::size_t(y) * width + x]; }

  bool contains(double x, double y) const {
    return x >= 0.0 && y >= 0.0 && x <= width - 1.0 && y <= height - 1.0;
  }

  // Bilinear sample with edge clamping. Safe for any finite (x, y).
  S sample(double x, double y) const {
    x = std::clamp(x, 0.0, double(width - 1));
    y = std::clamp(y, 0.0, double(height - 1));
    const int x0 = std::min(int(x), width - 2 >= 0 ? width - 2 : 0);
    const int y0 = std::min(int(y), height - 2 >= 0 ? height - 2 : 0);
    const int x1 = std::min(x0 + 1, width - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double v = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x1, y0)) +
                     fy * ((1.0 - fx) * at(x0, y1) + fx * at(x1, y1));
    return S(v);
  }

  Tensor4<S> to_tensor() const {
    Tensor4<S> t(1, height, width, 1);
    std::copy(data.begin(), data.end(), t.data.begin());
    return t;
  }

  template <typename T>
  Image<T> cast() const {
    Image<T> out;
    out.width = width;
    out.height = height;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = T(data[i]);
    return out;
  }
};

namespace detail {

inline int pnm_next_int(std::istream& is) {
  // Skips whitespace and '#' comments per the PNM grammar.
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  if (c == EOF) throw FormatError("truncated header");
  int v = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    any = true;
    c = is.get();
  }
  if (!any) throw FormatError("expected integer in header");
  return v;
}

}  // namespace detail

// Binary PGM (P5), 8- or 16-bit. Values are scaled to [0, 1].
template <typename S = float>
inline Image<S> load_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (m0 != 'P' || m1 != '5') throw FormatError("not a binary PGM: " + path);
  const int w = detail::pnm_next_int(is);
  const int h = detail::pnm_next_int(is);
  const int maxval = detail::pnm_next_int(is);
  if (w <= 0 || h <= 0) throw FormatError("bad dimensions: " + path);
  if (maxval <= 0 || maxval > 65535) throw FormatError("bad maxval: " + path);
  Image<S> img(w, h);
  const std::size_t n = std::size_t(w) * h;
  if (maxval < 256) {
    std::vector<std::uint8_t> raw(n);
    is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(n));
    if (!is) throw TruncationError("truncated pixel data: " + path);
    for (std::size_t i = 0; i < n; ++i) img.data[i] = S(raw[i]) / S(maxval);
  } else {
    // 16-bit PGM is big-endian.
    std::vector<std::uint8_t> raw(n * 2);
    is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(n * 2));
    if (!is) throw TruncationError("truncated pixel data: " + path);
    for (std::size_t i = 0; i < n; ++i) {
      const int v = (int(raw[2 * i]) << 8) | int(raw[2 * i + 1]);
      img.data[i] = S(v) / S(maxval);
    }
  }
  return img;
}

// Writes an 8-bit binary PGM; intensities are clamped to [0, 1] first.
template <typename S>
inline void save_pgm(const Image<S>& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> raw(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = std::clamp(double(img.data[i]), 0.0, 1.0);
    raw[i] = std::uint8_t(std::lround(v * 255.0));
  }
  os.write(reinterpret_cast<const char*>(raw.data()),
           std::streamsize(raw.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

// PFM grayscale float map ("Pf"), used for depth and response dumps.
// Scale header is negative (little-endian data), rows stored bottom-up.
template <typename S>
inline void save_pfm(const Image<S>& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
  for (int y = img.height - 1; y >= 0; --y) {
    std::vector<float> row(std::size_t(img.width));
    for (int x = 0; x < img.width; ++x) row[std::size_t(x)] = float(img.at(x, y));
    os.write(reinterpret_cast<const char*>(row.data()),
             std::streamsize(row.size() * 4));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

template <typename S = float>
inline Image<S> load_pfm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  std::string magic;
  is >> magic;
  if (magic != "Pf") throw FormatError("not a grayscale PFM: " + path);
  int w = 0, h = 0;
  double scale = 0;
  is >> w >> h >> scale;
  is.get();  // single whitespace before the raster
  if (w <= 0 || h <= 0) throw FormatError("bad dimensions: " + path);
  if (scale == 0) throw FormatError("bad scale: " + path);
  const bool little = scale < 0;
  Image<S> img(w, h);
  std::vector<std::uint8_t> raw(std::size_t(w) * 4);
  for (int y = h - 1; y >= 0; --y) {
    is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (!is) throw TruncationError("truncated pixel data: " + path);
    for (int x = 0; x < w; ++x) {
      std::uint32_t bits = 0;
      if (little) {
        for (int i = 0; i < 4; ++i)
          bits |= std::uint32_t(raw[std::size_t(4 * x + i)]) << (8 * i);
      } else {
        for (int i = 0; i < 4; ++i)
          bits = (bits << 8) | raw[std::size_t(4 * x + i)];
      }
      float v;
      std::memcpy(&v, &bits, 4);
      img.at(x, y) = S(v);
    }
  }
  return img;
}

}  // namespace imip
