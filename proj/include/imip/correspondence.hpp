#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include "imip/extraction.hpp"
#include "imip/geometry.hpp"
#include "imip/image.hpp"
#include "imip/klt.hpp"

namespace imip {

// Ground-truth correspondence function: pixel in image A to its true
// location in image B (possibly outside B's bounds) and back. nullopt means
// untrackable, i.e. no true location is known there.
struct CorrespondenceProvider {
  virtual ~CorrespondenceProvider() = default;
  virtual std::optional<Eigen::Vector2d> map_forward(
      const Eigen::Vector2d& p) const = 0;
  virtual std::optional<Eigen::Vector2d> map_backward(
      const Eigen::Vector2d& p) const = 0;
};

// Projective point transfer. Throws for points mapped to infinity; use
// apply_homography when a soft failure is wanted.
inline Eigen::Vector2d homography_map(const Eigen::Matrix3d& h,
                                      const Eigen::Vector2d& p) {
  const Eigen::Vector3d q = h * Eigen::Vector3d(p.x(), p.y(), 1.0);
  if (std::abs(q.z()) < 1e-12)
    throw std::domain_error("point maps to infinity under this homography");
  return {q.x() / q.z(), q.y() / q.z()};
}

class HomographyCorrespondence final : public CorrespondenceProvider {
 public:
  explicit HomographyCorrespondence(const Eigen::Matrix3d& h_ab)
      : h_(h_ab), hinv_(h_ab.inverse()) {}

  std::optional<Eigen::Vector2d> map_forward(
      const Eigen::Vector2d& p) const override {
    return apply_homography(h_, p.x(), p.y());
  }
  std::optional<Eigen::Vector2d> map_backward(
      const Eigen::Vector2d& p) const override {
    return apply_homography(hinv_, p.x(), p.y());
  }

 private:
  Eigen::Matrix3d h_, hinv_;
};

// Transfers a pixel from camera a to camera b through its known depth.
// Returns nothing when the point lands behind camera b.
inline std::optional<Eigen::Vector2d> depth_pose_map(
    const Eigen::Vector2d& p, double depth, const RigidPose& pose_a,
    const RigidPose& pose_b, const CameraIntrinsics& k) {
  require(depth > 0, "depth must be positive");
  const Eigen::Vector3d pc_a = depth * k.unproject(p.x(), p.y());
  const Eigen::Vector3d pc_b = pose_b.to_camera(pose_a.to_world(pc_a));
  return k.project(pc_b);
}

// Correspondence from per-view depth maps plus camera poses. Depth is read
// at the nearest pixel; nonpositive or out-of-map depth means untrackable.
class DepthPoseCorrespondence final : public CorrespondenceProvider {
 public:
  DepthPoseCorrespondence(Image<float> depth_a, Image<float> depth_b,
                          const RigidPose& pose_a, const RigidPose& pose_b,
                          const CameraIntrinsics& k)
      : depth_a_(std::move(depth_a)),
        depth_b_(std::move(depth_b)),
        pose_a_(pose_a),
        pose_b_(pose_b),
        k_(k) {}

  std::optional<Eigen::Vector2d> map_forward(
      const Eigen::Vector2d& p) const override {
    return map(p, depth_a_, pose_a_, pose_b_);
  }
  std::optional<Eigen::Vector2d> map_backward(
      const Eigen::Vector2d& p) const override {
    return map(p, depth_b_, pose_b_, pose_a_);
  }

 private:
  std::optional<Eigen::Vector2d> map(const Eigen::Vector2d& p,
                                     const Image<float>& depth,
                                     const RigidPose& from,
                                     const RigidPose& to) const {
    const int x = int(std::lround(p.x())), y = int(std::lround(p.y()));
    if (x < 0 || y < 0 || x >= depth.width || y >= depth.height)
      return std::nullopt;
    const double z = double(depth.at(x, y));
    if (!(z > 0)) return std::nullopt;
    return depth_pose_map(p, z, from, to, k_);
  }

  Image<float> depth_a_, depth_b_;
  RigidPose pose_a_, pose_b_;
  CameraIntrinsics k_;
};

// Tracks p frame-by-frame from frame_a to frame_b (either direction). Any
// intermediate tracking failure makes the whole chain untrackable.
template <typename S>
inline std::optional<Eigen::Vector2d> klt_chain_map(
    const std::vector<Image<S>>& frames, int frame_a, int frame_b,
    const Eigen::Vector2d& p, const TrackConfig& cfg = {}) {
  require(frame_a >= 0 && frame_a < int(frames.size()) && frame_b >= 0 &&
              frame_b < int(frames.size()),
          "frame index out of range");
  Eigen::Vector2d cur = p;
  const int step = frame_b >= frame_a ? 1 : -1;
  for (int f = frame_a; f != frame_b; f += step) {
    const auto next = track_point(frames[std::size_t(f)],
                                  frames[std::size_t(f + step)], cur, cfg);
    if (!next) return std::nullopt;
    cur = *next;
  }
  return cur;
}

// Chained-KLT correspondence between two frames of a sequence. Pyramids for
// the spanned frames are built once up front.
template <typename S>
class KltChainCorrespondence final : public CorrespondenceProvider {
 public:
  KltChainCorrespondence(const std::vector<Image<S>>& frames, int frame_a,
                         int frame_b, const TrackConfig& cfg = {})
      : frame_a_(frame_a), frame_b_(frame_b), cfg_(cfg) {
    require(frame_a >= 0 && frame_a < int(frames.size()) && frame_b >= 0 &&
                frame_b < int(frames.size()),
            "frame index out of range");
    const int lo = std::min(frame_a, frame_b), hi = std::max(frame_a, frame_b);
    lo_ = lo;
    for (int f = lo; f <= hi; ++f)
      pyramids_.push_back(build_pyramid(frames[std::size_t(f)], cfg.levels));
  }

  std::optional<Eigen::Vector2d> map_forward(
      const Eigen::Vector2d& p) const override {
    return chain(frame_a_, frame_b_, p);
  }
  std::optional<Eigen::Vector2d> map_backward(
      const Eigen::Vector2d& p) const override {
    return chain(frame_b_, frame_a_, p);
  }

 private:
  std::optional<Eigen::Vector2d> chain(int from, int to,
                                       const Eigen::Vector2d& p) const {
    Eigen::Vector2d cur = p;
    const int step = to >= from ? 1 : -1;
    for (int f = from; f != to; f += step) {
      const auto next =
          track_point(pyramids_[std::size_t(f - lo_)],
                      pyramids_[std::size_t(f + step - lo_)], cur, cfg_);
      if (!next) return std::nullopt;
      cur = *next;
    }
    return cur;
  }

  int frame_a_, frame_b_, lo_ = 0;
  TrackConfig cfg_;
  std::vector<Pyramid<S>> pyramids_;
};

// ---------------------------------------------------------------------------
// Labeling
// ---------------------------------------------------------------------------

enum class MatchLabel { kInlier, kOutlier, kUnassigned };

struct LabeledMatch {
  InterestPoint a, b;
  std::optional<Eigen::Vector2d> fwd;  // true location of a in image B
  std::optional<Eigen::Vector2d> bwd;  // true location of b in image A
  MatchLabel label = MatchLabel::kUnassigned;
};

struct LabeledMatchSet {
  std::vector<LabeledMatch> matches;

  int count(MatchLabel l) const {
    int n = 0;
    for (const auto& m : matches) n += m.label == l;
    return n;
  }
  int inlier_count() const { return count(MatchLabel::kInlier); }
  int outlier_count() const { return count(MatchLabel::kOutlier); }
  int unassigned_count() const { return count(MatchLabel::kUnassigned); }
};

// A channel match is an inlier only when the true correspondence confirms it
// in BOTH directions within threshold_px (Euclidean). If either true
// location is unknown or falls outside the other image, the channel is
// unassigned; everything else is an outlier.
inline LabeledMatchSet label_matches(const MatchSet& matches,
                                     const CorrespondenceProvider& psi,
                                     int width_a, int height_a, int width_b,
                                     int height_b, double threshold_px = 3.0) {
  require(threshold_px > 0, "threshold must be positive");
  auto inside = [](const Eigen::Vector2d& p, int w, int h) {
    return p.x() >= 0 && p.y() >= 0 && p.x() <= w - 1.0 && p.y() <= h - 1.0;
  };

  LabeledMatchSet out;
  out.matches.reserve(matches.pairs.size());
  for (const MatchPair& pair : matches.pairs) {
    LabeledMatch lm;
    lm.a = pair.a;
    lm.b = pair.b;
    const Eigen::Vector2d pa(double(pair.a.x), double(pair.a.y));
    const Eigen::Vector2d pb(double(pair.b.x), double(pair.b.y));
    lm.fwd = psi.map_forward(pa);
    lm.bwd = psi.map_backward(pb);

    if (!lm.fwd || !lm.bwd || !inside(*lm.fwd, width_b, height_b) ||
        !inside(*lm.bwd, width_a, height_a)) {
      lm.label = MatchLabel::kUnassigned;
    } else if ((*lm.bwd - pa).norm() <= threshold_px &&
               (*lm.fwd - pb).norm() <= threshold_px) {
      lm.label = MatchLabel::kInlier;
    } else {
      lm.label = MatchLabel::kOutlier;
    }
    out.matches.push_back(std::move(lm));
  }
  return out;
}

}  // namespace imip
