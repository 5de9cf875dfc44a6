#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "imip/correspondence.hpp"
#include "imip/extraction.hpp"
#include "imip/geometry.hpp"
#include "imip/image.hpp"
#include "imip/kvfile.hpp"
#include "imip/network.hpp"

namespace imip {

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

enum class DatasetKind { kSequenceStereo, kHomographyPairs };

struct HomographyPairSpec {
  std::string name;
  std::string image_a, image_b;  // absolute paths after loading
  std::string homography;
};

// A dataset is a key-value config file; all paths are relative to it.
//
// sequence_stereo:            homography_pairs:
//   kind = sequence_stereo      kind = homography_pairs
//   calibration = calib.txt     pairs = 3
//   poses = poses.txt           pair0_a = imgs/a0.pgm
//   left_dir = image_0          pair0_b = imgs/b0.pgm
//   right_dir = image_1         pair0_h = h/h0.txt
//   frames = 8                  pair0_name = wall   (optional)
struct DatasetHandle {
  DatasetKind kind = DatasetKind::kSequenceStereo;
  std::string root;

  CameraIntrinsics intrinsics;
  std::map<std::string, RigidPose> poses;
  std::string left_dir, right_dir;
  int n_frames = 0;

  std::vector<HomographyPairSpec> pairs;

  static std::string frame_name(int frame) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", frame);
    return buf;
  }
  std::string frame_path(int frame, bool right_camera) const {
    return (std::filesystem::path(root) /
            (right_camera ? right_dir : left_dir) /
            (frame_name(frame) + ".pgm"))
        .string();
  }
  const RigidPose& pose_of(int frame) const {
    const auto it = poses.find(frame_name(frame));
    require(it != poses.end(),
            "no ground-truth pose for frame " + frame_name(frame));
    return it->second;
  }
};

inline DatasetHandle load_dataset(const std::string& config_path) {
  const KeyValueFile kv = KeyValueFile::load(config_path);
  const std::filesystem::path root =
      std::filesystem::path(config_path).parent_path();
  const auto resolve = [&](const std::string& rel) {
    return (root / rel).string();
  };

  DatasetHandle ds;
  ds.root = root.string();
  const std::string kind = kv.get_string("kind");
  if (kind == "sequence_stereo") {
    ds.kind = DatasetKind::kSequenceStereo;
    ds.intrinsics = load_calibration(resolve(kv.get_string("calibration")));
    for (const PoseRecord& rec :
         load_pose_file(resolve(kv.get_string("poses"))))
      ds.poses[rec.frame_id] = rec.pose;
    ds.left_dir = kv.get_string("left_dir");
    ds.right_dir = kv.get_string("right_dir");
    ds.n_frames = int(kv.get_int("frames"));
    require(ds.n_frames >= 1, "dataset has no frames");
  } else if (kind == "homography_pairs") {
    ds.kind = DatasetKind::kHomographyPairs;
    const int n = int(kv.get_int("pairs"));
    require(n >= 1, "dataset has no pairs");
    for (int i = 0; i < n; ++i) {
      const std::string prefix = "pair" + std::to_string(i) + "_";
      HomographyPairSpec spec;
      spec.name = kv.get_string(prefix + "name", "pair" + std::to_string(i));
      spec.image_a = resolve(kv.get_string(prefix + "a"));
      spec.image_b = resolve(kv.get_string(prefix + "b"));
      spec.homography = resolve(kv.get_string(prefix + "h"));
      ds.pairs.push_back(std::move(spec));
    }
  } else {
    throw std::invalid_argument("unknown dataset kind: " + kind);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Scores and records
// ---------------------------------------------------------------------------

// Fraction of channels whose implicit match is an inlier.
inline double matching_score(int inliers, int n_channels) {
  require(n_channels > 0, "channel count must be positive");
  require(inliers >= 0 && inliers <= n_channels, "inlier count out of range");
  return double(inliers) / double(n_channels);
}

struct EvalRecord {
  std::string name;
  double d_rot_deg = 0;  // ground-truth motion between the two frames
  double d_trans_m = 0;
  double matching_score = 0;
  double e_rot_deg = std::numeric_limits<double>::infinity();
  double e_trans_m = std::numeric_limits<double>::infinity();
};

struct PairEvalConfig {
  int margin = -1;  // -1: half the receptive field
  RansacConfig ransac;
  int stereo_d_max = 128;
  double stereo_response_floor = 0.2;
};

// Stereo-lifts the base frame's points to 3D, then estimates the other
// frame's pose from its left image alone.
template <typename S>
inline EvalRecord evaluate_stereo_pair(const DatasetHandle& ds, int frame_base,
                                       int frame_other,
                                       const NetworkParams<S>& net,
                                       const PairEvalConfig& cfg = {}) {
  require(ds.kind == DatasetKind::kSequenceStereo,
          "stereo evaluation needs a stereo sequence dataset");
  const int r = receptive_field(net.config);
  const int margin = cfg.margin >= 0 ? cfg.margin : (r - 1) / 2;
  const int n = net.config.n_channels;

  const Image<S> left_base = load_pgm<S>(ds.frame_path(frame_base, false));
  const Image<S> right_base = load_pgm<S>(ds.frame_path(frame_base, true));
  const Image<S> left_other = load_pgm<S>(ds.frame_path(frame_other, false));

  const Tensor4<S> stack_base = forward_full(left_base.to_tensor(), net);
  const Tensor4<S> stack_right = forward_full(right_base.to_tensor(), net);
  const Tensor4<S> stack_other = forward_full(left_other.to_tensor(), net);

  const InterestPointSet pts_base = extract_points(stack_base, margin);
  const InterestPointSet pts_other = extract_points(stack_other, margin);
  const auto lifted = stereo_match_by_channel(
      pts_base, stack_right, ds.intrinsics, ds.intrinsics.baseline,
      cfg.stereo_d_max, cfg.stereo_response_floor);

  const RigidPose& pose_base = ds.pose_of(frame_base);
  const RigidPose& pose_other = ds.pose_of(frame_other);

  EvalRecord rec;
  rec.name = DatasetHandle::frame_name(frame_base) + "-" +
             DatasetHandle::frame_name(frame_other);
  rec.d_rot_deg = rotation_geodesic_deg(pose_base.R, pose_other.R);
  rec.d_trans_m = (pose_base.t - pose_other.t).norm();

  std::vector<Eigen::Vector3d> world;
  std::vector<Eigen::Vector2d> pixels;
  for (int ch = 0; ch < n; ++ch) {
    if (!lifted[std::size_t(ch)]) continue;
    world.push_back(pose_base.to_world(*lifted[std::size_t(ch)]));
    pixels.emplace_back(pts_other.points[std::size_t(ch)].x,
                        pts_other.points[std::size_t(ch)].y);
  }
  if (int(world.size()) < 4) return rec;  // not enough lifted points

  const RansacResult est = ransac_p3p(world, pixels, ds.intrinsics, cfg.ransac);
  rec.matching_score = matching_score(est.inlier_count, n);
  if (est.success) {
    rec.e_rot_deg = rotation_geodesic_deg(est.pose.R, pose_other.R);
    rec.e_trans_m = (est.pose.t - pose_other.t).norm();
  }
  return rec;
}

template <typename S>
inline std::vector<EvalRecord> evaluate_stereo_pairs(
    const DatasetHandle& ds,
    const std::vector<std::array<int, 2>>& frame_pairs,
    const NetworkParams<S>& net, const PairEvalConfig& cfg = {}) {
  std::vector<EvalRecord> records;
  records.reserve(frame_pairs.size());
  for (const auto& [base, other] : frame_pairs)
    records.push_back(evaluate_stereo_pair(ds, base, other, net, cfg));
  return records;
}

// Planar pairs carry no pose to estimate; the record keeps the labeled
// matching score and infinite pose errors.
template <typename S>
inline EvalRecord evaluate_homography_pair(const Image<S>& img_a,
                                           const Image<S>& img_b,
                                           const Eigen::Matrix3d& h_ab,
                                           const NetworkParams<S>& net,
                                           const std::string& name,
                                           double threshold_px = 3.0,
                                           int margin = -1) {
  const int r = receptive_field(net.config);
  const int m = margin >= 0 ? margin : (r - 1) / 2;
  const Tensor4<S> sa = forward_full(img_a.to_tensor(), net);
  const Tensor4<S> sb = forward_full(img_b.to_tensor(), net);
  const HomographyCorrespondence psi(h_ab);
  const LabeledMatchSet labels = label_matches(
      match_by_channel(extract_points(sa, m), extract_points(sb, m)), psi,
      img_a.width, img_a.height, img_b.width, img_b.height, threshold_px);
  EvalRecord rec;
  rec.name = name;
  rec.matching_score =
      matching_score(labels.inlier_count(), net.config.n_channels);
  return rec;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fixed6(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

// Byte-stable CSV; infinities are written as "inf".
inline void save_eval_csv(const std::vector<EvalRecord>& records,
                          const std::string& path) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "name,dR,dt,matching score,eR,et\n";
  for (const auto& r : records)
    os << r.name << ',' << detail::fixed6(r.d_rot_deg) << ','
       << detail::fixed6(r.d_trans_m) << ','
       << detail::fixed6(r.matching_score) << ','
       << detail::fixed6(r.e_rot_deg) << ',' << detail::fixed6(r.e_trans_m)
       << '\n';
}

// Uniform bins over [0, 1]; a score of exactly 1 lands in the last bin.
inline std::vector<int> inlierness_histogram(const std::vector<double>& scores,
                                             int n_bins) {
  require(n_bins >= 1, "need at least one bin");
  std::vector<int> bins(std::size_t(n_bins), 0);
  for (double s : scores) {
    require(s >= 0.0 && s <= 1.0, "score outside [0, 1]");
    const int b = std::min(n_bins - 1, int(s * n_bins));
    ++bins[std::size_t(b)];
  }
  return bins;
}

inline void save_histogram_csv(const std::vector<int>& bins,
                               const std::string& path) {
  require(!bins.empty(), "empty histogram");
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "bin_lo,bin_hi,count\n";
  const int n = int(bins.size());
  for (int b = 0; b < n; ++b)
    os << detail::fixed6(double(b) / n) << ','
       << detail::fixed6(double(b + 1) / n) << ',' << bins[std::size_t(b)]
       << '\n';
}

struct AccuracyThresholds {
  double rot_deg = 0;
  double trans_m = 0;
};

inline constexpr AccuracyThresholds kKittiThresholds{1.0, 0.30};
inline constexpr AccuracyThresholds kEurocThresholds{3.0, 0.10};

// Fraction of records whose pose beat both thresholds (strictly).
inline double accuracy(const std::vector<EvalRecord>& records,
                       const AccuracyThresholds& thresholds) {
  require(!records.empty(), "accuracy over an empty record list");
  int hits = 0;
  for (const auto& r : records)
    if (r.e_rot_deg < thresholds.rot_deg && r.e_trans_m < thresholds.trans_m)
      ++hits;
  return double(hits) / double(records.size());
}

// ---------------------------------------------------------------------------
// Size-versus-accuracy report
// ---------------------------------------------------------------------------

struct SizeAccuracyPoint {
  std::string method;
  std::size_t size_bytes = 0;
  double accuracy = 0;
};

inline void save_size_accuracy_csv(const std::vector<SizeAccuracyPoint>& pts,
                                   const std::string& path) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "method,size_bytes,accuracy\n";
  for (const auto& p : pts)
    os << p.method << ',' << p.size_bytes << ','
       << detail::fixed6(p.accuracy) << '\n';
}

// Scatter plot with a log-scale byte axis, written as a standalone SVG.
inline void save_size_accuracy_svg(const std::vector<SizeAccuracyPoint>& pts,
                                   const std::string& path) {
  require(!pts.empty(), "empty report");
  for (const auto& p : pts)
    require(p.size_bytes >= 1, "sizes must be positive for the log axis");

  double lo = std::log10(double(pts[0].size_bytes));
  double hi = lo;
  for (const auto& p : pts) {
    lo = std::min(lo, std::log10(double(p.size_bytes)));
    hi = std::max(hi, std::log10(double(p.size_bytes)));
  }
  double dec_lo = std::floor(lo);
  double dec_hi = std::ceil(hi);
  if (dec_hi - dec_lo < 1) dec_hi = dec_lo + 1;

  const double width = 640, height = 480;
  const double ml = 70, mr = 30, mt = 30, mb = 50;
  const double pw = width - ml - mr, ph = height - mt - mb;
  const auto tx = [&](double bytes) {
    return ml + (std::log10(bytes) - dec_lo) / (dec_hi - dec_lo) * pw;
  };
  const auto ty = [&](double acc) { return mt + (1.0 - acc) * ph; };
  const auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };

  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << int(width)
     << "\" height=\"" << int(height) << "\" viewBox=\"0 0 " << int(width)
     << " " << int(height) << "\">\n";
  os << "<rect width=\"" << int(width) << "\" height=\"" << int(height)
     << "\" fill=\"white\"/>\n";
  os << "<line x1=\"" << num(ml) << "\" y1=\"" << num(mt + ph) << "\" x2=\""
     << num(ml + pw) << "\" y2=\"" << num(mt + ph)
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << num(ml) << "\" y1=\"" << num(mt) << "\" x2=\""
     << num(ml) << "\" y2=\"" << num(mt + ph) << "\" stroke=\"black\"/>\n";

  for (double dec = dec_lo; dec <= dec_hi + 0.5; dec += 1.0) {
    const double x = ml + (dec - dec_lo) / (dec_hi - dec_lo) * pw;
    os << "<line x1=\"" << num(x) << "\" y1=\"" << num(mt + ph) << "\" x2=\""
       << num(x) << "\" y2=\"" << num(mt + ph + 6)
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(x) << "\" y=\"" << num(mt + ph + 22)
       << "\" font-size=\"12\" text-anchor=\"middle\">1e" << int(dec)
       << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double acc = i / 4.0;
    const double y = ty(acc);
    os << "<line x1=\"" << num(ml - 6) << "\" y1=\"" << num(y) << "\" x2=\""
       << num(ml) << "\" y2=\"" << num(y) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(ml - 10) << "\" y=\"" << num(y + 4)
       << "\" font-size=\"12\" text-anchor=\"end\">" << num(acc)
       << "</text>\n";
  }
  os << "<text x=\"" << num(ml + pw / 2) << "\" y=\"" << num(height - 10)
     << "\" font-size=\"13\" text-anchor=\"middle\">representation size "
        "(bytes)</text>\n";
  os << "<text x=\"16\" y=\"" << num(mt + ph / 2)
     << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << num(mt + ph / 2) << ")\">accuracy</text>\n";

  for (const auto& p : pts) {
    const double x = tx(double(p.size_bytes));
    const double y = ty(std::clamp(p.accuracy, 0.0, 1.0));
    os << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y)
       << "\" r=\"4\" fill=\"#1f77b4\"/>\n";
    os << "<text x=\"" << num(x + 7) << "\" y=\"" << num(y - 7)
       << "\" font-size=\"11\">" << p.method << "</text>\n";
  }
  os << "</svg>\n";
}

inline void save_size_accuracy_report(const std::vector<SizeAccuracyPoint>& pts,
                                      const std::string& csv_path,
                                      const std::string& svg_path) {
  save_size_accuracy_csv(pts, csv_path);
  save_size_accuracy_svg(pts, svg_path);
}

}  // namespace imip
