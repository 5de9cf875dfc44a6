#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "imip/klt.hpp"
#include "imip/synth.hpp"

using namespace imip;

namespace {

Image<float> textured(int w, int h, std::uint64_t seed, double ox = 0,
                      double oy = 0) {
  return render_texture<float>(SmoothTexture::make(seed), w, h, ox, oy);
}

}  // namespace

TEST_CASE("pyramid halves with ceil and stops below 4 px", "[klt]") {
  const auto pyr = build_pyramid(textured(37, 23, 1), 8);
  REQUIRE(pyr.levels.size() == 3);  // 37x23 -> 19x12 -> 10x6, next 5x3 stops
  CHECK(pyr.levels[0].width == 37);
  CHECK(pyr.levels[0].height == 23);
  CHECK(pyr.levels[1].width == 19);
  CHECK(pyr.levels[1].height == 12);
  CHECK(pyr.levels[2].width == 10);
  CHECK(pyr.levels[2].height == 6);

  const auto capped = build_pyramid(textured(64, 64, 2), 2);
  CHECK(capped.levels.size() == 2);
  CHECK_THROWS(build_pyramid(textured(16, 16, 3), 0));
}

TEST_CASE("downsampling matches a direct reference", "[klt]") {
  const auto img = textured(11, 9, 4);
  const auto pyr = build_pyramid(img, 2);
  REQUIRE(pyr.levels.size() == 2);
  const auto& half = pyr.levels[1];
  REQUIRE(half.width == 6);
  REQUIRE(half.height == 5);

  // Reference: separable [1,4,6,4,1]/16 blur with clamped borders, decimated
  // on even pixels.
  const int taps[5] = {1, 4, 6, 4, 1};
  const auto clamp_at = [&](int x, int y) {
    x = std::clamp(x, 0, img.width - 1);
    y = std::clamp(y, 0, img.height - 1);
    return double(img.at(x, y));
  };
  for (int y = 0; y < half.height; ++y)
    for (int x = 0; x < half.width; ++x) {
      double acc = 0;
      for (int ky = -2; ky <= 2; ++ky) {
        double row = 0;
        for (int kx = -2; kx <= 2; ++kx)
          row += taps[kx + 2] * clamp_at(2 * x + kx, 2 * y + ky);
        acc += taps[ky + 2] * row / 16.0;
      }
      REQUIRE(double(half.at(x, y)) ==
              Catch::Approx(acc / 16.0).margin(1e-6));
    }
}

TEST_CASE("constant images stay constant through the pyramid", "[klt]") {
  const Image<float> img(40, 40, 0.37f);
  const auto pyr = build_pyramid(img, 3);
  for (const auto& level : pyr.levels)
    for (float v : level.data) REQUIRE(v == Catch::Approx(0.37).margin(1e-6));
}

TEST_CASE("tracking recovers known subpixel translations", "[klt]") {
  TrackConfig cfg;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const double dx = (seed % 2 ? -1 : 1) * (0.5 + double(seed) * 0.9);
    const double dy = (seed % 3 ? 1 : -1) * (0.3 + double(seed) * 0.5);
    const auto a = textured(96, 96, 100 + seed);
    const auto b = textured(96, 96, 100 + seed, dx, dy);  // b(p) = tex(p+d)
    const Eigen::Vector2d p(48.0, 48.0);
    const auto q = track_point(a, b, p, cfg);
    REQUIRE(q.has_value());
    // The patch around p in a appears at p - d in b.
    CHECK(std::abs(q->x() - (p.x() - dx)) < 0.12);
    CHECK(std::abs(q->y() - (p.y() - dy)) < 0.12);
  }
}

TEST_CASE("textureless windows are rejected by the eigenvalue gate", "[klt]") {
  const Image<float> flat(64, 64, 0.5f);
  CHECK(!track_point(flat, flat, Eigen::Vector2d(32, 32), TrackConfig{}));
}

TEST_CASE("points too close to the border are lost", "[klt]") {
  const auto img = textured(64, 64, 9);
  CHECK(!track_point(img, img, Eigen::Vector2d(3.0, 32.0), TrackConfig{}));
  CHECK(!track_point(img, img, Eigen::Vector2d(32.0, 62.0), TrackConfig{}));
}

TEST_CASE("track configuration is validated", "[klt]") {
  const auto img = textured(64, 64, 10);
  TrackConfig cfg;
  cfg.window = 4;  // must be odd
  CHECK_THROWS(track_point(img, img, Eigen::Vector2d(32, 32), cfg));
  cfg.window = 3;  // must be >= 5
  CHECK_THROWS(track_point(img, img, Eigen::Vector2d(32, 32), cfg));
}

TEST_CASE("static sequences keep every track alive and still", "[klt]") {
  std::vector<Image<float>> frames(4, textured(80, 60, 11));
  SequenceTrackConfig cfg;
  const TrackTable table = track_sequence(frames, cfg);
  REQUIRE(table.n_frames == 4);
  REQUIRE(table.n_tracks() > 10);
  CHECK(table.alive_count(0) == table.n_tracks());
  for (int f = 1; f < 4; ++f)
    CHECK(table.surviving_fraction(0, f) == Catch::Approx(1.0));
  for (int t = 0; t < table.n_tracks(); ++t)
    for (int f = 1; f < 4; ++f)
      CHECK((table.positions[std::size_t(t)][std::size_t(f)] -
             table.positions[std::size_t(t)][0])
                .norm() < 0.35);
}

TEST_CASE("moving sequences lose border tracks", "[klt]") {
  std::vector<Image<float>> frames;
  for (int f = 0; f < 3; ++f)
    frames.push_back(textured(80, 60, 12, 12.0 * f, 0.0));
  const TrackTable table = track_sequence(frames, SequenceTrackConfig{});
  CHECK(table.surviving_fraction(0, 2) < 1.0);
  CHECK(table.surviving_fraction(0, 2) > 0.2);
  CHECK(table.surviving_fraction(0, 1) >= table.surviving_fraction(0, 2));
}

TEST_CASE("pair selection draws only qualifying frames", "[klt]") {
  // Hand-built table: 10 tracks, 4 frames; frame 1 keeps 8, frame 2 keeps 5,
  // frame 3 keeps 2.
  TrackTable table;
  table.n_frames = 4;
  table.grid_step = 12;
  for (int t = 0; t < 10; ++t) {
    const int until = t < 2 ? 3 : (t < 5 ? 2 : (t < 8 ? 1 : 0));
    table.alive_until.push_back(until);
    table.positions.emplace_back(4, Eigen::Vector2d(0, 0));
  }
  CHECK(table.alive_count(0) == 10);
  CHECK(table.alive_count(1) == 8);
  CHECK(table.alive_count(2) == 5);
  CHECK(table.alive_count(3) == 2);
  CHECK(table.surviving_fraction(0, 2) == Catch::Approx(0.5));

  CHECK(qualifying_frames(table, 0, 0.3) == std::vector<int>{1, 2});
  CHECK(qualifying_frames(table, 0, 0.5) == std::vector<int>{1, 2});
  CHECK(qualifying_frames(table, 0, 0.75) == std::vector<int>{1});

  PairSelectionConfig cfg;
  cfg.overlap_o = 0.5;
  cfg.rng_seed = 3;
  const auto picks = select_pairs(table, 0, cfg, 20);
  REQUIRE(picks.size() == 20);
  for (const auto& [base, f] : picks) {
    CHECK(base == 0);
    CHECK((f == 1 || f == 2));
  }
  CHECK(select_pairs(table, 0, cfg, 20) == picks);  // deterministic

  cfg.overlap_o = 0.95;
  CHECK(select_pairs(table, 0, cfg, 5).empty());
}

TEST_CASE("track tables roundtrip through the cache file", "[klt]") {
  std::vector<Image<float>> frames(3, textured(60, 48, 13));
  SequenceTrackConfig cfg;
  const TrackTable table = track_sequence(frames, cfg);
  const std::uint64_t hash = sequence_hash(frames);

  const std::string path = "/tmp/imip_tracks_test.bin";
  save_track_table(table, hash, cfg, path);
  const TrackTableCache cache = load_track_table(path);
  CHECK(cache.seq_hash == hash);
  CHECK(cache.config.grid_step == cfg.grid_step);
  CHECK(cache.config.track.window == cfg.track.window);
  REQUIRE(cache.table.n_tracks() == table.n_tracks());
  REQUIRE(cache.table.n_frames == table.n_frames);
  for (int t = 0; t < table.n_tracks(); ++t) {
    REQUIRE(cache.table.alive_until[std::size_t(t)] ==
            table.alive_until[std::size_t(t)]);
    for (int f = 0; f <= table.alive_until[std::size_t(t)]; ++f)
      REQUIRE((cache.table.positions[std::size_t(t)][std::size_t(f)] -
               table.positions[std::size_t(t)][std::size_t(f)])
                  .norm() == 0.0);
  }

  // A different sequence must hash differently.
  auto other = frames;
  other[1].at(5, 5) += 0.25f;
  CHECK(sequence_hash(other) != hash);

  auto bytes = read_file_bytes(path);
  bytes[bytes.size() - 2] ^= 0x10;
  write_file_bytes(path, bytes);
  CHECK_THROWS_AS(load_track_table(path), FormatError);
  std::remove(path.c_str());
}
