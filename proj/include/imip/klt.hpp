#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "imip/binio.hpp"
#include "imip/image.hpp"
#include "imip/parallel.hpp"
#include "imip/rng.hpp"

namespace imip {

// ---------------------------------------------------------------------------
// Pyramid
// ---------------------------------------------------------------------------

template <typename S>
struct Pyramid {
  std::vector<Image<S>> levels;  // levels[0] is full resolution
};

namespace detail {

// 5-tap Gaussian blur [1 4 6 4 1]/16, separable, clamped borders, then
// decimation keeping even pixels. Output dims are ceil(in/2).
template <typename S>
inline Image<S> downsample_half(const Image<S>& in) {
  const int w = in.width, h = in.height;
  static constexpr double kTap[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0,
                                     1 / 16.0};
  Image<double> tmp(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int k = -2; k <= 2; ++k)
        acc += kTap[k + 2] * double(in.at(std::clamp(x + k, 0, w - 1), y));
      tmp.at(x, y) = acc;
    }
  const int ow = (w + 1) / 2, oh = (h + 1) / 2;
  Image<S> out(ow, oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int k = -2; k <= 2; ++k)
        acc += kTap[k + 2] * tmp.at(2 * x, std::clamp(2 * y + k, 0, h - 1));
      out.at(x, y) = S(acc);
    }
  return out;
}

}  // namespace detail

template <typename S>
inline Pyramid<S> build_pyramid(const Image<S>& img, int n_levels) {
  require(n_levels >= 1, "pyramid needs at least one level");
  Pyramid<S> p;
  p.levels.push_back(img);
  for (int l = 1; l < n_levels; ++l) {
    const Image<S>& prev = p.levels.back();
    if ((prev.width + 1) / 2 < 4 || (prev.height + 1) / 2 < 4) break;
    p.levels.push_back(detail::downsample_half(prev));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Point tracking
// ---------------------------------------------------------------------------

struct TrackConfig {
  int window = 21;  // odd, full side length
  int levels = 3;
  int max_iters = 30;
  double eps = 0.01;  // stop when the update drops below this many pixels
  // A track is lost when the structure tensor's smaller eigenvalue falls
  // below min_eig_floor * window.
  double min_eig_floor = 1e-4;

  bool operator==(const TrackConfig&) const = default;
};

namespace detail {

// Mean squared difference over the window pixels that land inside both
// frames. Windows may spill past small pyramid levels; clamped samples would
// bias the score toward small displacements, so spilled pixels are skipped.
// Less than a quarter of the window overlapping counts as no match at all.
template <typename S>
inline double window_mean_ssd(const Image<S>& a, const Image<S>& b,
                              const Eigen::Vector2d& pa,
                              const Eigen::Vector2d& pb, int hw) {
  double ssd = 0;
  int n = 0;
  for (int j = -hw; j <= hw; ++j)
    for (int i = -hw; i <= hw; ++i) {
      const double ax = pa.x() + i, ay = pa.y() + j;
      const double bx = pb.x() + i, by = pb.y() + j;
      if (ax < 0 || ay < 0 || ax > a.width - 1 || ay > a.height - 1) continue;
      if (bx < 0 || by < 0 || bx > b.width - 1 || by > b.height - 1) continue;
      const double d = double(a.sample(ax, ay)) - double(b.sample(bx, by));
      ssd += d * d;
      ++n;
    }
  const int area = (2 * hw + 1) * (2 * hw + 1);
  if (4 * n < area) return std::numeric_limits<double>::infinity();
  return ssd / n;
}

inline bool window_inside(const Eigen::Vector2d& p, int hw, int w, int h) {
  return p.x() - hw >= 0 && p.y() - hw >= 0 && p.x() + hw <= w - 1 &&
         p.y() + hw <= h - 1;
}

}  // namespace detail

// Coarse-to-fine Gauss-Newton registration of a square window around p from
// image a into image b. Gradients come from the template (image a), sampled
// once per level. Coarse levels sample with clamped borders even when the
// window spills past the frame; at full resolution the window must stay
// inside. Returns the matched position in b, or nothing when the point is
// untrackable: too little texture, the iteration leaves the frame, or the
// full-resolution residual got worse than where the coarse levels left it.
template <typename S>
inline std::optional<Eigen::Vector2d> track_point(const Pyramid<S>& pa,
                                                  const Pyramid<S>& pb,
                                                  const Eigen::Vector2d& p,
                                                  const TrackConfig& cfg = {}) {
  require(cfg.window >= 5 && cfg.window % 2 == 1, "window must be odd, >= 5");
  const int hw = cfg.window / 2;
  const int levels =
      std::min({cfg.levels, int(pa.levels.size()), int(pb.levels.size())});
  const double min_eig_thresh = cfg.min_eig_floor * double(cfg.window);

  Eigen::Vector2d d(0, 0);
  for (int l = levels - 1; l >= 0; --l) {
    const Image<S>& ia = pa.levels[std::size_t(l)];
    const Image<S>& ib = pb.levels[std::size_t(l)];
    const double scale = double(1 << l);
    const Eigen::Vector2d pl = p / scale;

    if (l == 0 && !detail::window_inside(pl, hw + 1, ia.width, ia.height))
      return std::nullopt;

    // Template and its gradients, sampled on a (window+2)^2 grid so central
    // differences cover the full window.
    const int side = cfg.window + 2;
    std::vector<double> patch(std::size_t(side) * side);
    for (int j = 0; j < side; ++j)
      for (int i = 0; i < side; ++i)
        patch[std::size_t(j) * side + i] =
            double(ia.sample(pl.x() + i - hw - 1, pl.y() + j - hw - 1));

    std::vector<double> gx(std::size_t(cfg.window) * cfg.window);
    std::vector<double> gy(gx.size());
    std::vector<double> tmpl(gx.size());
    double gxx = 0, gxy = 0, gyy = 0;
    for (int j = 0; j < cfg.window; ++j)
      for (int i = 0; i < cfg.window; ++i) {
        const std::size_t pi = std::size_t(j + 1) * side + (i + 1);
        const std::size_t wi = std::size_t(j) * cfg.window + i;
        tmpl[wi] = patch[pi];
        gx[wi] = (patch[pi + 1] - patch[pi - 1]) / 2.0;
        gy[wi] = (patch[pi + side] - patch[pi - side]) / 2.0;
        gxx += gx[wi] * gx[wi];
        gxy += gx[wi] * gy[wi];
        gyy += gy[wi] * gy[wi];
      }
    const double tr = gxx + gyy;
    const double det_part =
        std::sqrt((gxx - gyy) * (gxx - gyy) + 4.0 * gxy * gxy);
    const double min_eig = (tr - det_part) / 2.0;
    if (min_eig < min_eig_thresh) return std::nullopt;

    if (l == levels - 1) {
      // Integer block-match seed at the coarsest level. Gauss-Newton alone
      // only converges within about half a texture period; the scan covers
      // displacements the iteration cannot reach from zero.
      constexpr int kSeedRadius = 3;
      double best = std::numeric_limits<double>::infinity();
      Eigen::Vector2d best_d = d;
      for (int oy = -kSeedRadius; oy <= kSeedRadius; ++oy)
        for (int ox = -kSeedRadius; ox <= kSeedRadius; ++ox) {
          const Eigen::Vector2d cand = d + Eigen::Vector2d(ox, oy);
          if (l == 0 &&
              !detail::window_inside(pl + cand, hw, ib.width, ib.height))
            continue;
          const double ssd = detail::window_mean_ssd(ia, ib, pl, pl + cand, hw);
          if (ssd < best) {
            best = ssd;
            best_d = cand;
          }
        }
      d = best_d;
    }

    double ssd_entry = 0;
    if (l == 0) {
      if (!detail::window_inside(pl + d, hw, ib.width, ib.height))
        return std::nullopt;
      ssd_entry = detail::window_mean_ssd(ia, ib, pl, pl + d, hw);
    }

    for (int it = 0; it < cfg.max_iters; ++it) {
      const Eigen::Vector2d q = pl + d;
      if (l == 0 && !detail::window_inside(q, hw, ib.width, ib.height))
        return std::nullopt;
      // Normal equations over the pixels inside both frames. At full
      // resolution that is the whole window; at small coarse levels the
      // spilled part is excluded so clamped borders cannot bias the step.
      double axx = 0, axy = 0, ayy = 0, bx = 0, by = 0;
      int n_valid = 0;
      for (int j = 0; j < cfg.window; ++j)
        for (int i = 0; i < cfg.window; ++i) {
          const double tx = pl.x() + i - hw, ty = pl.y() + j - hw;
          const double sx = q.x() + i - hw, sy = q.y() + j - hw;
          if (tx < 0 || ty < 0 || tx > ia.width - 1 || ty > ia.height - 1)
            continue;
          if (sx < 0 || sy < 0 || sx > ib.width - 1 || sy > ib.height - 1)
            continue;
          const std::size_t wi = std::size_t(j) * cfg.window + i;
          const double diff = tmpl[wi] - double(ib.sample(sx, sy));
          axx += gx[wi] * gx[wi];
          axy += gx[wi] * gy[wi];
          ayy += gy[wi] * gy[wi];
          bx += diff * gx[wi];
          by += diff * gy[wi];
          ++n_valid;
        }
      if (4 * n_valid < cfg.window * cfg.window) return std::nullopt;
      // Solve [axx axy; axy ayy] * delta = [bx; by].
      const double det = axx * ayy - axy * axy;
      if (det <= 0) return std::nullopt;
      const Eigen::Vector2d delta((ayy * bx - axy * by) / det,
                                  (axx * by - axy * bx) / det);
      d += delta;
      if (delta.norm() < cfg.eps) break;
    }

    if (l == 0) {
      if (!detail::window_inside(pl + d, hw, ib.width, ib.height))
        return std::nullopt;
      const double ssd_exit = detail::window_mean_ssd(ia, ib, pl, pl + d, hw);
      // Divergence blows the residual up by orders of magnitude; the slack
      // absorbs bilinear interpolation noise around an already-converged
      // entry position.
      if (ssd_exit > 1.5 * ssd_entry + 1e-6) return std::nullopt;
    } else {
      d *= 2.0;  // displacement carried to the next finer level
    }
  }
  return p + d;
}

template <typename S>
inline std::optional<Eigen::Vector2d> track_point(const Image<S>& a,
                                                  const Image<S>& b,
                                                  const Eigen::Vector2d& p,
                                                  const TrackConfig& cfg = {}) {
  return track_point(build_pyramid(a, cfg.levels), build_pyramid(b, cfg.levels),
                     p, cfg);
}

// ---------------------------------------------------------------------------
// Sequence tracking
// ---------------------------------------------------------------------------

struct SequenceTrackConfig {
  TrackConfig track;
  int grid_step = 12;  // seed spacing in pixels

  bool operator==(const SequenceTrackConfig&) const = default;
};

// Dense-grid tracks over an image sequence. Once a track is lost it stays
// lost; positions past alive_until are meaningless.
struct TrackTable {
  int n_frames = 0;
  int grid_step = 0;
  std::vector<std::vector<Eigen::Vector2d>> positions;  // [track][frame]
  std::vector<int> alive_until;  // last frame index with a valid position

  int n_tracks() const { return int(alive_until.size()); }

  int alive_count(int frame) const {
    int n = 0;
    for (const int last : alive_until) n += last >= frame;
    return n;
  }

  // Fraction of the tracks alive at base_frame that still survive at frame.
  // Non-increasing in frame.
  double surviving_fraction(int base_frame, int frame) const {
    const int base = alive_count(base_frame);
    if (base == 0) return 0.0;
    int both = 0;
    for (const int last : alive_until)
      both += last >= base_frame && last >= frame;
    return double(both) / double(base);
  }
};

template <typename S>
inline TrackTable track_sequence(const std::vector<Image<S>>& frames,
                                 const SequenceTrackConfig& cfg = {}) {
  require(frames.size() >= 2, "sequence tracking needs at least 2 frames");
  for (const auto& f : frames)
    require(f.width == frames[0].width && f.height == frames[0].height,
            "all frames must share one size");

  TrackTable table;
  table.n_frames = int(frames.size());
  table.grid_step = cfg.grid_step;

  const int margin = cfg.track.window / 2 + 2;
  for (int y = margin; y <= frames[0].height - 1 - margin; y += cfg.grid_step)
    for (int x = margin; x <= frames[0].width - 1 - margin;
         x += cfg.grid_step) {
      table.positions.emplace_back(frames.size(),
                                   Eigen::Vector2d(double(x), double(y)));
      table.alive_until.push_back(0);
    }

  Pyramid<S> prev = build_pyramid(frames[0], cfg.track.levels);
  for (std::size_t f = 1; f < frames.size(); ++f) {
    Pyramid<S> cur = build_pyramid(frames[f], cfg.track.levels);
    parallel_for(0, table.n_tracks(), [&](int t) {
      if (table.alive_until[std::size_t(t)] != int(f) - 1) return;
      const auto next = track_point(
          prev, cur, table.positions[std::size_t(t)][f - 1], cfg.track);
      if (next) {
        table.positions[std::size_t(t)][f] = *next;
        table.alive_until[std::size_t(t)] = int(f);
      }
    });
    prev = std::move(cur);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Pair selection by track overlap
// ---------------------------------------------------------------------------

struct PairSelectionConfig {
  double overlap_o = 0.3;  // 0.3 when selecting training pairs, 0.5 for eval
  std::uint64_t rng_seed = 0;
};

// Frames j > base_frame where at least a fraction o of base_frame's tracks
// still survive.
inline std::vector<int> qualifying_frames(const TrackTable& table,
                                          int base_frame, double overlap_o) {
  require(base_frame >= 0 && base_frame < table.n_frames,
          "base frame out of range");
  std::vector<int> out;
  for (int j = base_frame + 1; j < table.n_frames; ++j)
    if (table.surviving_fraction(base_frame, j) >= overlap_o) out.push_back(j);
  return out;
}

// Draws `count` partner frames uniformly (with replacement) from the
// qualifying set. An empty qualifying set yields an empty list; that is a
// legitimate no-pair outcome, not an error.
inline std::vector<std::pair<int, int>> select_pairs(
    const TrackTable& table, int base_frame, const PairSelectionConfig& cfg,
    int count = 1) {
  const std::vector<int> pool = qualifying_frames(table, base_frame,
                                                  cfg.overlap_o);
  std::vector<std::pair<int, int>> out;
  if (pool.empty()) return out;
  Rng rng(cfg.rng_seed);
  for (int i = 0; i < count; ++i)
    out.emplace_back(base_frame,
                     pool[std::size_t(rng.bounded(pool.size()))]);
  return out;
}

// ---------------------------------------------------------------------------
// Track table cache file
// ---------------------------------------------------------------------------
// Layout: magic "IMTT" | version u32 | sequence hash u64 | config block |
// crc32(payload) u32 | payload (per track: alive_until i32, then positions
// for frames 0..alive_until as f64 x,y).

inline constexpr std::uint32_t kTrackTableFormatVersion = 1;

template <typename S>
inline std::uint64_t sequence_hash(const std::vector<Image<S>>& frames) {
  std::uint64_t state = frames.size();
  auto mix = [&state](std::uint64_t v) {
    std::uint64_t s = state ^ v;
    state = splitmix64(s);
  };
  for (const auto& f : frames) {
    mix(std::uint64_t(f.width) << 32 | std::uint64_t(f.height));
    for (const S v : f.data) {
      float fv = float(v);
      std::uint32_t bits;
      std::memcpy(&bits, &fv, 4);
      mix(bits);
    }
  }
  return splitmix64(state);
}

inline void save_track_table(const TrackTable& table, std::uint64_t seq_hash,
                             const SequenceTrackConfig& cfg,
                             const std::string& path) {
  ByteWriter payload;
  for (int t = 0; t < table.n_tracks(); ++t) {
    const int last = table.alive_until[std::size_t(t)];
    payload.u32(std::uint32_t(last));
    for (int f = 0; f <= last; ++f) {
      payload.f64(table.positions[std::size_t(t)][std::size_t(f)].x());
      payload.f64(table.positions[std::size_t(t)][std::size_t(f)].y());
    }
  }

  ByteWriter w;
  w.bytes("IMTT", 4);
  w.u32(kTrackTableFormatVersion);
  w.u64(seq_hash);
  w.u32(std::uint32_t(table.n_frames));
  w.u32(std::uint32_t(table.grid_step));
  w.u32(std::uint32_t(table.n_tracks()));
  w.u32(std::uint32_t(cfg.track.window));
  w.u32(std::uint32_t(cfg.track.levels));
  w.u32(std::uint32_t(cfg.track.max_iters));
  w.f64(cfg.track.eps);
  w.f64(cfg.track.min_eig_floor);
  w.u32(std::uint32_t(cfg.grid_step));
  w.u32(crc32(payload.buf.data(), payload.buf.size()));
  w.bytes(payload.buf.data(), payload.buf.size());
  write_file_bytes(path, w.buf);
}

struct TrackTableCache {
  TrackTable table;
  std::uint64_t seq_hash = 0;
  SequenceTrackConfig config;
};

inline TrackTableCache load_track_table(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  ByteReader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "IMTT")
    throw FormatError("not a track table file: " + path);
  const std::uint32_t version = r.u32();
  if (version != kTrackTableFormatVersion)
    throw VersionError("unsupported track table version " +
                       std::to_string(version) + " in " + path);

  TrackTableCache cache;
  cache.seq_hash = r.u64();
  cache.table.n_frames = int(r.u32());
  cache.table.grid_step = int(r.u32());
  const int n_tracks = int(r.u32());
  cache.config.track.window = int(r.u32());
  cache.config.track.levels = int(r.u32());
  cache.config.track.max_iters = int(r.u32());
  cache.config.track.eps = r.f64();
  cache.config.track.min_eig_floor = r.f64();
  cache.config.grid_step = int(r.u32());
  const std::uint32_t stored_crc = r.u32();
  if (crc32(bytes.data() + r.pos(), r.remaining()) != stored_crc)
    throw ChecksumError("track table payload checksum mismatch: " + path);

  for (int t = 0; t < n_tracks; ++t) {
    const int last = int(r.u32());
    if (last >= cache.table.n_frames)
      throw FormatError("track outlives the sequence: " + path);
    std::vector<Eigen::Vector2d> pos(std::size_t(cache.table.n_frames),
                                     Eigen::Vector2d::Zero());
    for (int f = 0; f <= last; ++f) {
      const double x = r.f64();
      const double y = r.f64();
      pos[std::size_t(f)] = {x, y};
    }
    cache.table.positions.push_back(std::move(pos));
    cache.table.alive_until.push_back(last);
  }
  return cache;
}

}  // namespace imip
