// Command-line front end: train, eval, pairs, compress, report. Every
// failure is one "error: ..." line on stderr and a nonzero exit.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "imip/imip.hpp"

using namespace imip;

namespace {

std::string resolve_near(const std::string& anchor_file,
                         const std::string& rel) {
  return (std::filesystem::path(anchor_file).parent_path() / rel).string();
}

NetworkConfig config_from_kv(const KeyValueFile& kv) {
  NetworkConfig cfg = NetworkConfig::standard(
      int(kv.get_int("n_channels", 128)),
      std::uint64_t(kv.get_int("seed", 0)));
  cfg.depth = int(kv.get_int("depth", cfg.depth));
  cfg.channels_first_half =
      int(kv.get_int("channels_first_half", cfg.channels_first_half));
  cfg.channels_second_half =
      int(kv.get_int("channels_second_half", cfg.channels_second_half));
  cfg.leaky_slope = kv.get_double("leaky_slope", cfg.leaky_slope);
  return cfg;
}

std::vector<Image<float>> load_left_frames(const DatasetHandle& ds) {
  std::vector<Image<float>> frames;
  frames.reserve(std::size_t(ds.n_frames));
  for (int f = 0; f < ds.n_frames; ++f)
    frames.push_back(load_pgm<float>(ds.frame_path(f, false)));
  return frames;
}

// Reuses a cached track table when it matches the sequence and config;
// otherwise tracks from scratch and refreshes the cache.
TrackTable tracks_for(const std::vector<Image<float>>& frames,
                      const SequenceTrackConfig& cfg,
                      const std::string& cache_path) {
  const std::uint64_t hash = sequence_hash(frames);
  if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
    try {
      TrackTableCache cache = load_track_table(cache_path);
      if (cache.seq_hash == hash && cache.config == cfg)
        return std::move(cache.table);
    } catch (const FormatError&) {
      // unreadable cache: fall through and rebuild
    }
  }
  TrackTable table = track_sequence(frames, cfg);
  if (!cache_path.empty()) save_track_table(table, hash, cfg, cache_path);
  return table;
}

int cmd_train(const std::string& config_path, const std::string& out_path,
              const std::string& best_path, const std::string& log_path) {
  const KeyValueFile kv = KeyValueFile::load(config_path);
  const NetworkConfig cfg = config_from_kv(kv);
  NetworkParams<float> net = init_weights<float>(cfg);

  TrainLoopConfig loop;
  loop.iterations = kv.get_int("iterations");
  loop.val_every = kv.get_int("val_every", 1000);
  loop.lr = kv.get_double("lr", 1e-5);
  const double o_train = kv.get_double("o_train", 0.3);
  const std::uint64_t seed = std::uint64_t(kv.get_int("seed", 0));

  if (loop.iterations == 0) {
    // Contract: a zero-iteration run still produces a valid parameter file.
    save_params(net, out_path);
    std::printf("wrote initial parameters to %s\n", out_path.c_str());
    return 0;
  }

  const DatasetHandle ds =
      load_dataset(resolve_near(config_path, kv.get_string("dataset")));

  TrainResult<float> result;
  if (ds.kind == DatasetKind::kHomographyPairs) {
    struct LoadedPair {
      Image<float> a, b;
      std::unique_ptr<HomographyCorrespondence> psi;
    };
    std::vector<LoadedPair> pool;
    for (const auto& spec : ds.pairs) {
      LoadedPair p;
      p.a = load_pgm<float>(spec.image_a);
      p.b = load_pgm<float>(spec.image_b);
      p.psi = std::make_unique<HomographyCorrespondence>(
          load_homography(spec.homography));
      pool.push_back(std::move(p));
    }
    std::vector<EvalPair<float>> val;
    for (const auto& p : pool) val.push_back({&p.a, &p.b, p.psi.get()});
    const PairSource<float> source = [&](std::int64_t step) {
      Rng rng = Rng::at(seed, std::uint64_t(step));
      return val[std::size_t(rng.bounded(val.size()))];
    };
    result = train(net, source, val, loop);
  } else {
    const auto frames = load_left_frames(ds);
    SequenceTrackConfig tcfg;
    const std::string cache = kv.has("track_cache")
                                  ? resolve_near(config_path,
                                                 kv.get_string("track_cache"))
                                  : std::string();
    const TrackTable table = tracks_for(frames, tcfg, cache);

    // Correspondence for the pair drawn at each step; owned here so the
    // EvalPair handed to the loop stays valid through the step.
    std::unique_ptr<KltChainCorrespondence<float>> step_psi;
    const PairSource<float> source = [&](std::int64_t step) -> EvalPair<float> {
      Rng rng = Rng::at(seed, std::uint64_t(step));
      for (int attempt = 0; attempt < ds.n_frames; ++attempt) {
        const int base = int(rng.bounded(std::uint64_t(ds.n_frames)));
        const auto picked = select_pairs(
            table, base, {o_train, rng.next_u64()}, 1);
        if (picked.empty()) continue;
        const auto [a, b] = picked[0];
        step_psi = std::make_unique<KltChainCorrespondence<float>>(
            frames, a, b);
        return {&frames[std::size_t(a)], &frames[std::size_t(b)],
                step_psi.get()};
      }
      throw std::runtime_error(
          "no frame pair reaches the training overlap threshold");
    };

    // Held-out style validation on consecutive pairs from the sequence head.
    std::vector<std::unique_ptr<KltChainCorrespondence<float>>> val_psi;
    std::vector<EvalPair<float>> val;
    for (int f = 0; f + 1 < ds.n_frames && f < 4; ++f) {
      val_psi.push_back(
          std::make_unique<KltChainCorrespondence<float>>(frames, f, f + 1));
      val.push_back({&frames[std::size_t(f)], &frames[std::size_t(f) + 1],
                     val_psi.back().get()});
    }
    result = train(net, source, val, loop);
  }

  save_params(result.best_params, out_path);
  if (!best_path.empty()) save_params(result.best_params, best_path);
  if (!log_path.empty()) save_training_log(result.log, log_path);
  std::printf("trained %lld steps, best validation inlier mean %.3f at step "
              "%lld, params in %s\n",
              static_cast<long long>(loop.iterations),
              result.best_val_inliers,
              static_cast<long long>(result.best_step), out_path.c_str());
  return 0;
}

int cmd_eval(const std::string& dataset_path, const std::string& params_path,
             const std::string& out_path, int stride,
             const std::string& hist_path, const std::string& preset) {
  const DatasetHandle ds = load_dataset(dataset_path);
  const NetworkParams<float> net = load_params<float>(params_path);

  std::vector<EvalRecord> records;
  if (ds.kind == DatasetKind::kSequenceStereo) {
    require(stride >= 1, "stride must be at least 1");
    std::vector<std::array<int, 2>> frame_pairs;
    for (int f = 0; f + stride < ds.n_frames; ++f)
      frame_pairs.push_back({f, f + stride});
    require(!frame_pairs.empty(), "dataset has no frame pair at this stride");
    records = evaluate_stereo_pairs(ds, frame_pairs, net);
  } else {
    for (const auto& spec : ds.pairs) {
      const auto img_a = load_pgm<float>(spec.image_a);
      const auto img_b = load_pgm<float>(spec.image_b);
      records.push_back(evaluate_homography_pair(
          img_a, img_b, load_homography(spec.homography), net, spec.name));
    }
  }
  save_eval_csv(records, out_path);

  if (!hist_path.empty()) {
    std::vector<double> scores;
    for (const auto& r : records) scores.push_back(r.matching_score);
    save_histogram_csv(inlierness_histogram(scores, 20), hist_path);
  }
  if (!preset.empty()) {
    const AccuracyThresholds th =
        preset == "kitti" ? kKittiThresholds : kEurocThresholds;
    std::printf("accuracy %.6f\n", accuracy(records, th));
  }
  std::printf("evaluated %zu pairs into %s\n", records.size(),
              out_path.c_str());
  return 0;
}

int cmd_pairs(const std::string& dataset_path, const std::string& out_path,
              double overlap, int count, std::uint64_t seed,
              const std::string& cache_path) {
  const DatasetHandle ds = load_dataset(dataset_path);
  require(ds.kind == DatasetKind::kSequenceStereo,
          "pair selection runs on stereo sequence datasets");
  const auto frames = load_left_frames(ds);
  const TrackTable table = tracks_for(frames, SequenceTrackConfig{},
                                      cache_path);

  std::ofstream os(out_path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + out_path);
  int written = 0;
  for (int base = 0; base + 1 < ds.n_frames; ++base) {
    const auto picked =
        select_pairs(table, base, {overlap, seed + std::uint64_t(base)},
                     count);
    for (const auto& [a, b] : picked) {
      os << a << " " << b << "\n";
      ++written;
    }
  }
  std::printf("selected %d pairs at overlap %.2f into %s\n", written, overlap,
              out_path.c_str());
  return 0;
}

int cmd_compress(const std::string& desc_path, const std::string& method,
                 const std::string& out_path, int k, int m,
                 std::uint64_t seed) {
  const DescriptorSet set = load_descriptors(desc_path);
  const int d = int(set.data.cols());
  const std::size_t raw =
      raw_descriptor_payload_bytes(d, set.scalar_width);
  if (method == "pca") {
    const PcaModel model = pca_fit(set.data, k);
    save_pca(model, out_path);
    std::printf("pca d=%d k=%d payload_bytes=%zu raw_bytes=%zu model=%s\n", d,
                k, pca_descriptor_payload_bytes(k), raw, out_path.c_str());
  } else if (method == "pq") {
    const PqModel model = pq_fit(set.data, m, k, seed);
    save_pq(model, out_path);
    std::printf("pq d=%d m=%d k=%d payload_bytes=%zu raw_bytes=%zu model=%s\n",
                d, m, k, pq_descriptor_payload_bytes(m, k), raw,
                out_path.c_str());
  } else {
    throw std::invalid_argument("unknown method: " + method);
  }
  return 0;
}

std::vector<EvalRecord> load_eval_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "name,dR,dt,matching score,eR,et")
    throw FormatError("not an evaluation CSV: " + path);
  const auto num = [](const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    return std::stod(s);
  };
  std::vector<EvalRecord> records;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[6];
    for (int i = 0; i < 6; ++i)
      if (!std::getline(ss, f[i], ','))
        throw FormatError("short row in " + path);
    EvalRecord r;
    r.name = f[0];
    r.d_rot_deg = num(f[1]);
    r.d_trans_m = num(f[2]);
    r.matching_score = num(f[3]);
    r.e_rot_deg = num(f[4]);
    r.e_trans_m = num(f[5]);
    records.push_back(std::move(r));
  }
  return records;
}

int cmd_report(const std::vector<std::string>& points,
               const std::string& csv_path, const std::string& svg_path,
               const std::string& eval_path, const std::string& preset) {
  if (!eval_path.empty()) {
    require(!preset.empty(), "reporting accuracy needs --preset");
    const AccuracyThresholds th =
        preset == "kitti" ? kKittiThresholds : kEurocThresholds;
    std::printf("accuracy %.6f\n", accuracy(load_eval_csv(eval_path), th));
  }
  if (!points.empty()) {
    require(!csv_path.empty() || !svg_path.empty(),
            "size-accuracy points need --csv or --svg");
    std::vector<SizeAccuracyPoint> pts;
    for (const auto& spec : points) {
      const auto c1 = spec.find(':');
      const auto c2 = spec.find(':', c1 + 1);
      require(c1 != std::string::npos && c2 != std::string::npos,
              "point format is name:bytes:accuracy");
      SizeAccuracyPoint p;
      p.method = spec.substr(0, c1);
      p.size_bytes = std::stoull(spec.substr(c1 + 1, c2 - c1 - 1));
      p.accuracy = std::stod(spec.substr(c2 + 1));
      pts.push_back(std::move(p));
    }
    if (!csv_path.empty()) save_size_accuracy_csv(pts, csv_path);
    if (!svg_path.empty()) save_size_accuracy_svg(pts, svg_path);
    std::printf("wrote size-accuracy report for %zu methods\n", pts.size());
  }
  require(!eval_path.empty() || !points.empty(),
          "nothing to report; pass --eval or --point");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"implicitly matched interest points"};
  app.require_subcommand(1);

  std::string config, out, best, log_path;
  auto* train_cmd = app.add_subcommand("train", "train a detector");
  train_cmd->add_option("--config", config, "training config file")
      ->required();
  train_cmd->add_option("--out", out, "output parameter file")->required();
  train_cmd->add_option("--best", best, "extra copy of the best snapshot");
  train_cmd->add_option("--log", log_path, "per-step loss CSV");

  std::string dataset, params, eval_out, hist, preset;
  int stride = 1;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate pairs of a dataset");
  eval_cmd->add_option("--dataset", dataset, "dataset config")->required();
  eval_cmd->add_option("--params", params, "detector parameters")->required();
  eval_cmd->add_option("--out", eval_out, "output CSV")->required();
  eval_cmd->add_option("--stride", stride, "frame distance between pairs");
  eval_cmd->add_option("--hist", hist, "matching-score histogram CSV");
  eval_cmd->add_option("--preset", preset, "accuracy preset: kitti or euroc")
      ->check(CLI::IsMember({"kitti", "euroc"}));

  std::string pairs_dataset, pairs_out, cache;
  double overlap = 0.3;
  int count = 1;
  std::uint64_t seed = 0;
  auto* pairs_cmd =
      app.add_subcommand("pairs", "select frame pairs by track overlap");
  pairs_cmd->add_option("--dataset", pairs_dataset, "dataset config")
      ->required();
  pairs_cmd->add_option("--out", pairs_out, "pair list file")->required();
  pairs_cmd->add_option("--overlap", overlap, "survival fraction threshold");
  pairs_cmd->add_option("--count", count, "pairs per base frame");
  pairs_cmd->add_option("--seed", seed, "selection seed");
  pairs_cmd->add_option("--cache", cache, "track table cache file");

  std::string desc, method, comp_out;
  int k = 16, m = 2;
  std::uint64_t comp_seed = 0;
  auto* comp_cmd =
      app.add_subcommand("compress", "fit a descriptor compressor");
  comp_cmd->add_option("--descriptors", desc, "descriptor file")->required();
  comp_cmd->add_option("--method", method, "pca or pq")
      ->required()
      ->check(CLI::IsMember({"pca", "pq"}));
  comp_cmd->add_option("--out", comp_out, "model file")->required();
  comp_cmd->add_option("--k", k, "components (pca) or centroids (pq)");
  comp_cmd->add_option("--m", m, "subspaces (pq)");
  comp_cmd->add_option("--seed", comp_seed, "fit seed (pq)");

  std::vector<std::string> points;
  std::string rep_csv, rep_svg, rep_eval, rep_preset;
  auto* rep_cmd = app.add_subcommand("report", "summarize evaluations");
  rep_cmd->add_option("--point", points,
                      "size-accuracy point, name:bytes:accuracy");
  rep_cmd->add_option("--csv", rep_csv, "size-accuracy CSV output");
  rep_cmd->add_option("--svg", rep_svg, "size-accuracy SVG output");
  rep_cmd->add_option("--eval", rep_eval, "evaluation CSV to score");
  rep_cmd->add_option("--preset", rep_preset,
                      "accuracy preset: kitti or euroc")
      ->check(CLI::IsMember({"kitti", "euroc"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(config, out, best, log_path);
    if (eval_cmd->parsed())
      return cmd_eval(dataset, params, eval_out, stride, hist, preset);
    if (pairs_cmd->parsed())
      return cmd_pairs(pairs_dataset, pairs_out, overlap, count, seed, cache);
    if (comp_cmd->parsed())
      return cmd_compress(desc, method, comp_out, k, m, comp_seed);
    if (rep_cmd->parsed())
      return cmd_report(points, rep_csv, rep_svg, rep_eval, rep_preset);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
