#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "imip/extraction.hpp"
#include "imip/rng.hpp"
#include "imip/tensor.hpp"

namespace imip {

// ---------------------------------------------------------------------------
// Camera model and poses
// ---------------------------------------------------------------------------

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  double baseline = 0;  // meters, rectified stereo; 0 when monocular

  Eigen::Vector3d unproject(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy, 1.0};
  }
  // Camera-frame point to pixel. Fails for points at or behind the camera.
  std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& pc) const {
    if (!(pc.z() > 1e-12)) return std::nullopt;
    return Eigen::Vector2d(fx * pc.x() / pc.z() + cx,
                           fy * pc.y() / pc.z() + cy);
  }
  Eigen::Matrix3d k_matrix() const {
    Eigen::Matrix3d k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }
};

inline CameraIntrinsics load_calibration(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  CameraIntrinsics c;
  if (!(is >> c.fx >> c.fy >> c.cx >> c.cy >> c.width >> c.height >>
        c.baseline))
    throw std::runtime_error("calibration file needs 7 values: " + path);
  if (c.fx <= 0 || c.fy <= 0 || c.width <= 0 || c.height <= 0)
    throw std::runtime_error("calibration values out of range: " + path);
  return c;
}

inline void save_calibration(const CameraIntrinsics& c,
                             const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.precision(17);
  os << c.fx << " " << c.fy << " " << c.cx << " " << c.cy << " " << c.width
     << " " << c.height << " " << c.baseline << "\n";
}

// Rigid transform taking camera-frame points to world-frame points:
//   x_world = R * x_camera + t.
struct RigidPose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d to_world(const Eigen::Vector3d& pc) const {
    return R * pc + t;
  }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& pw) const {
    return R.transpose() * (pw - t);
  }
  RigidPose inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
};

inline std::optional<Eigen::Vector2d> project_world_point(
    const CameraIntrinsics& intr, const RigidPose& world_from_camera,
    const Eigen::Vector3d& pw) {
  return intr.project(world_from_camera.to_camera(pw));
}

// Angle of the relative rotation, in degrees. Both inputs must be rotation
// matrices; the angle is undefined otherwise.
namespace detail {
// Geodesic without the orthonormality gate, for hot inner loops on matrices
// already known to be rotations. atan2 of the skew norm against the trace
// keeps full precision at both ends of [0, pi], where acos of the trace
// alone does not.
inline double rotation_angle_deg_unchecked(const Eigen::Matrix3d& ra,
                                           const Eigen::Matrix3d& rb) {
  const Eigen::Matrix3d r = ra * rb.transpose();
  const double s = Eigen::Vector3d(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0),
                                   r(1, 0) - r(0, 1))
                       .norm();
  return std::atan2(s, r.trace() - 1.0) * 180.0 / M_PI;
}
}  // namespace detail

inline double rotation_geodesic_deg(const Eigen::Matrix3d& ra,
                                    const Eigen::Matrix3d& rb) {
  const Eigen::Matrix3d i = Eigen::Matrix3d::Identity();
  if ((ra.transpose() * ra - i).norm() > 1e-6 ||
      (rb.transpose() * rb - i).norm() > 1e-6)
    throw std::invalid_argument("rotation matrix is not orthonormal");
  return detail::rotation_angle_deg_unchecked(ra, rb);
}

inline double translation_error_m(const Eigen::Vector3d& ta,
                                  const Eigen::Vector3d& tb) {
  return (ta - tb).norm();
}

struct PoseRecord {
  std::string frame_id;
  RigidPose pose;
};

// One pose per line: frame_id qw qx qy qz tx ty tz (unit quaternion,
// scalar first, world-from-camera).
inline std::vector<PoseRecord> load_pose_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<PoseRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    PoseRecord rec;
    double qw, qx, qy, qz, tx, ty, tz;
    if (!(ls >> rec.frame_id)) continue;
    if (!(ls >> qw >> qx >> qy >> qz >> tx >> ty >> tz))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected frame_id and 7 numbers");
    Eigen::Quaterniond q(qw, qx, qy, qz);
    if (std::abs(q.norm() - 1.0) > 1e-3)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": quaternion is not unit length");
    rec.pose.R = q.normalized().toRotationMatrix();
    rec.pose.t = {tx, ty, tz};
    out.push_back(std::move(rec));
  }
  return out;
}

inline void save_pose_file(const std::vector<PoseRecord>& poses,
                           const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.precision(17);
  for (const auto& rec : poses) {
    Eigen::Quaterniond q(rec.pose.R);
    if (q.w() < 0) q.coeffs() = -q.coeffs();
    os << rec.frame_id << " " << q.w() << " " << q.x() << " " << q.y() << " "
       << q.z() << " " << rec.pose.t.x() << " " << rec.pose.t.y() << " "
       << rec.pose.t.z() << "\n";
  }
}

// Point mapping under a 3x3 projective transform; fails near the line at
// infinity.
inline std::optional<Eigen::Vector2d> apply_homography(
    const Eigen::Matrix3d& h, double x, double y) {
  const Eigen::Vector3d q = h * Eigen::Vector3d(x, y, 1.0);
  if (std::abs(q.z()) < 1e-12) return std::nullopt;
  return Eigen::Vector2d(q.x() / q.z(), q.y() / q.z());
}

inline std::optional<Eigen::Vector2d> apply_homography(
    const Eigen::Matrix3d& h, const Eigen::Vector2d& p) {
  return apply_homography(h, p.x(), p.y());
}

inline Eigen::Matrix3d load_homography(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  Eigen::Matrix3d h;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (!(is >> h(r, c)))
        throw std::runtime_error("homography file needs 9 values: " + path);
  return h;
}

inline void save_homography(const Eigen::Matrix3d& h, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.precision(17);
  for (int r = 0; r < 3; ++r)
    os << h(r, 0) << " " << h(r, 1) << " " << h(r, 2) << "\n";
}

// ---------------------------------------------------------------------------
// Rectified stereo
// ---------------------------------------------------------------------------

// Camera-frame point from a rectified stereo observation. Disparities under
// d_min are rejected; the implied depth is unreliable.
inline std::optional<Eigen::Vector3d> triangulate_rectified(
    double x_left, double x_right, double y, const CameraIntrinsics& intr,
    double baseline, double d_min = 0.5) {
  if (baseline <= 0)
    throw std::invalid_argument("triangulation needs a positive baseline");
  const double d = x_left - x_right;
  if (d < d_min) return std::nullopt;
  const double z = intr.fx * baseline / d;
  return Eigen::Vector3d((x_left - intr.cx) / intr.fx * z,
                         (y - intr.cy) / intr.fy * z, z);
}

// Lifts each left-image interest point to 3-D by scanning its epipolar row
// in the right image's response stack on the same channel. The best column
// within d_max to the left wins; matches under the response floor or with
// unusable disparity yield no point for that channel. Output is indexed by
// channel, in the left camera frame.
template <typename S>
inline std::vector<std::optional<Eigen::Vector3d>> stereo_match_by_channel(
    const InterestPointSet& left, const Tensor4<S>& right_stack,
    const CameraIntrinsics& intr, double baseline, int d_max = 128,
    double response_floor = 0.2) {
  require(right_stack.shape.b == 1, "expected a single response stack");
  require(int(right_stack.shape.c) == left.n(),
          "point set and response stack disagree on channel count");
  const int w = int(right_stack.shape.w);
  const int h = int(right_stack.shape.h);
  std::vector<std::optional<Eigen::Vector3d>> out(std::size_t(left.n()));
  for (int i = 0; i < left.n(); ++i) {
    const InterestPoint& p = left.points[std::size_t(i)];
    if (p.y < 0 || p.y >= h) continue;
    int best_x = -1;
    double best_r = 0;
    const int lo = std::max(0, p.x - d_max);
    for (int c = lo; c < std::min(p.x, w); ++c) {
      const double r = double(right_stack.at(0, p.y, c, i));
      if (best_x < 0 || r > best_r) {
        best_x = c;
        best_r = r;
      }
    }
    if (best_x < 0 || best_r < response_floor) continue;
    out[std::size_t(i)] = triangulate_rectified(double(p.x), double(best_x),
                                                double(p.y), intr, baseline);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pose from three points
// ---------------------------------------------------------------------------

namespace detail {

// Real roots of a polynomial given ascending coefficients, via the
// companion-matrix eigenvalues, each polished with a few Newton steps.
inline std::vector<double> real_roots(std::vector<double> coef) {
  double maxc = 0;
  for (double c : coef) maxc = std::max(maxc, std::abs(c));
  if (maxc == 0) return {};
  while (coef.size() > 1 && std::abs(coef.back()) < 1e-13 * maxc)
    coef.pop_back();
  const int deg = int(coef.size()) - 1;
  if (deg < 1) return {};
  if (deg == 1) return {-coef[0] / coef[1]};

  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(deg, deg);
  for (int i = 1; i < deg; ++i) companion(i, i - 1) = 1.0;
  for (int i = 0; i < deg; ++i) companion(i, deg - 1) = -coef[i] / coef[deg];
  const Eigen::VectorXcd eig = companion.eigenvalues();

  auto eval = [&coef](double x, double& p, double& dp) {
    p = 0;
    dp = 0;
    for (int i = int(coef.size()) - 1; i >= 0; --i) {
      dp = dp * x + p;
      p = p * x + coef[std::size_t(i)];
    }
  };

  std::vector<double> roots;
  for (int i = 0; i < deg; ++i) {
    const std::complex<double> z = eig(i);
    if (std::abs(z.imag()) > 1e-6 * std::max(1.0, std::abs(z.real()))) continue;
    double x = z.real();
    for (int it = 0; it < 20; ++it) {
      double p, dp;
      eval(x, p, dp);
      if (dp == 0) break;
      const double step = p / dp;
      x -= step;
      if (std::abs(step) < 1e-14 * std::max(1.0, std::abs(x))) break;
    }
    bool dup = false;
    for (double r : roots)
      if (std::abs(r - x) < 1e-9 * std::max(1.0, std::abs(x))) dup = true;
    if (!dup) roots.push_back(x);
  }
  return roots;
}

// Rotation that aligns two point triads, built from matched orthonormal
// frames anchored at the first point.
inline bool triad_orientation(const std::array<Eigen::Vector3d, 3>& from,
                              const std::array<Eigen::Vector3d, 3>& to,
                              Eigen::Matrix3d& r_out) {
  auto frame = [](const std::array<Eigen::Vector3d, 3>& p,
                  Eigen::Matrix3d& m) {
    const Eigen::Vector3d ab = p[1] - p[0];
    const Eigen::Vector3d ac = p[2] - p[0];
    if (ab.norm() < 1e-12) return false;
    const Eigen::Vector3d e1 = ab.normalized();
    Eigen::Vector3d n = e1.cross(ac);
    if (n.norm() < 1e-12) return false;  // collinear triad
    const Eigen::Vector3d e3 = n.normalized();
    const Eigen::Vector3d e2 = e3.cross(e1);
    m.col(0) = e1;
    m.col(1) = e2;
    m.col(2) = e3;
    return true;
  };
  Eigen::Matrix3d mf, mt;
  if (!frame(from, mf) || !frame(to, mt)) return false;
  r_out = mt * mf.transpose();
  return true;
}

}  // namespace detail

// All poses (up to four) placing a calibrated camera so that three known
// world points project along three given view rays. Bearings need not be
// normalized. Degenerate triads yield an empty result.
inline std::vector<RigidPose> p3p_solve(
    const std::array<Eigen::Vector3d, 3>& world,
    const std::array<Eigen::Vector3d, 3>& bearings) {
  const Eigen::Vector3d f1 = bearings[0].normalized();
  const Eigen::Vector3d f2 = bearings[1].normalized();
  const Eigen::Vector3d f3 = bearings[2].normalized();

  const double a = (world[1] - world[2]).norm();  // opposite point 1
  const double b = (world[0] - world[2]).norm();  // opposite point 2
  const double c = (world[0] - world[1]).norm();  // opposite point 3
  const Eigen::Vector3d cross =
      (world[1] - world[0]).cross(world[2] - world[0]);
  if (a < 1e-12 || b < 1e-12 || c < 1e-12 || cross.norm() < 1e-10 * b * c)
    throw std::invalid_argument("world points are collinear");

  const double ca = f2.dot(f3);
  const double cb = f1.dot(f3);
  const double cg = f1.dot(f2);

  const double A = (a * a) / (b * b);
  const double C = (c * c) / (b * b);

  // Quartic in v = s3/s1 from the two law-of-cosines ratios (coefficients
  // carry a common factor of 4 in the middle terms' derivation).
  const double q4 = (A - C - 1) * (A - C - 1) - 4 * C * ca * ca;
  const double q3 =
      4 * (cb * (-A * A + 2 * A * C + A - C * C - C) + ca * cg * (A + C - 1) +
           2 * C * ca * ca * cb);
  const double q2 =
      2 * (2 * A * A * cb * cb + A * A - 4 * A * C * cb * cb - 2 * A * C -
           4 * A * ca * cb * cg - 2 * A * cg * cg + 2 * C * C * cb * cb +
           C * C - 2 * C * ca * ca - 4 * C * ca * cb * cg + 2 * ca * ca +
           2 * cg * cg - 1);
  const double q1 =
      4 * (-A * A * cb + 2 * A * C * cb + A * ca * cg + 2 * A * cb * cg * cg -
           A * cb - C * C * cb + C * ca * cg + C * cb - ca * cg);
  const double q0 = (A - C + 1) * (A - C + 1) - 4 * A * cg * cg;

  const std::vector<double> vs = detail::real_roots({q0, q1, q2, q3, q4});

  std::vector<RigidPose> poses;
  for (const double v : vs) {
    if (!(v > 0)) continue;
    const double denom_s1 = 1 + v * v - 2 * v * cb;
    if (!(denom_s1 > 1e-15)) continue;
    const double s1 = b / std::sqrt(denom_s1);

    // u = s2/s1, either by eliminating s1 between the remaining two
    // equations (linear in u) or from the quadratic one equation gives
    // directly. Both routes are tried; the ray-consistency filter below
    // discards whatever does not actually solve the system.
    std::vector<double> us;
    const double den = 2 * (ca * v - cg);
    const double num = v * v * (1 - A + C) + 2 * cb * v * (A - C) + (C - A - 1);
    if (std::abs(den) > 1e-10) us.push_back(num / den);
    const double disc = cg * cg - (1 - C * denom_s1);
    if (disc >= 0) {
      const double r = std::sqrt(disc);
      us.push_back(cg + r);
      us.push_back(cg - r);
    }

    for (const double u : us) {
      if (!(u > 0)) continue;
      // Residual of the one equation not used to construct u.
      const double res_a =
          std::abs(u * u + v * v - 2 * u * v * ca - A * denom_s1);
      const double res_c = std::abs(u * u - 2 * u * cg + 1 - C * denom_s1);
      if (res_a > 1e-6 * (1 + A) || res_c > 1e-6 * (1 + C)) continue;

      const double s2 = u * s1;
      const double s3 = v * s1;
      const std::array<Eigen::Vector3d, 3> cam = {s1 * f1, s2 * f2, s3 * f3};

      Eigen::Matrix3d r_cw;
      if (!detail::triad_orientation(world, cam, r_cw)) continue;
      const Eigen::Vector3d t_cw = cam[0] - r_cw * world[0];

      // Keep only candidates whose rays actually pass through all three
      // points.
      bool ok = true;
      const std::array<const Eigen::Vector3d*, 3> fs = {&f1, &f2, &f3};
      for (int i = 0; i < 3 && ok; ++i) {
        const Eigen::Vector3d pc = r_cw * world[std::size_t(i)] + t_cw;
        if (pc.norm() < 1e-12 ||
            pc.normalized().dot(*fs[std::size_t(i)]) < std::cos(1e-6))
          ok = false;
      }
      if (!ok) continue;

      RigidPose pose;  // convert camera-from-world to world-from-camera
      pose.R = r_cw.transpose();
      pose.t = -(r_cw.transpose() * t_cw);

      bool dup = false;
      for (const auto& p : poses) {
        if (detail::rotation_angle_deg_unchecked(p.R, pose.R) < 1e-7 &&
            (p.t - pose.t).norm() < 1e-7 * (1 + pose.t.norm()))
          dup = true;
      }
      if (!dup) poses.push_back(pose);
    }
  }
  return poses;
}

// ---------------------------------------------------------------------------
// Robust pose estimation
// ---------------------------------------------------------------------------

struct RansacConfig {
  double threshold_px = 3.0;
  int max_iters = 1000;
  double confidence = 0.99;
  std::uint64_t seed = 0;
};

struct RansacResult {
  bool success = false;
  RigidPose pose;
  int inlier_count = 0;
  std::vector<char> inlier_mask;
  double mean_reproj_px = std::numeric_limits<double>::infinity();
  int iterations_run = 0;
};

// Minimal-sample consensus over three-point pose hypotheses. Deterministic
// for a fixed seed: iteration i draws from Rng::at(seed, i) regardless of
// how earlier iterations went. No refit on the inlier set afterwards; the
// best minimal-sample pose is returned as-is.
inline RansacResult ransac_p3p(const std::vector<Eigen::Vector3d>& world,
                               const std::vector<Eigen::Vector2d>& pixels,
                               const CameraIntrinsics& intr,
                               const RansacConfig& cfg = {}) {
  if (world.size() != pixels.size())
    throw std::invalid_argument("world and pixel lists differ in length");
  const int n = int(world.size());
  if (n < 4)
    throw std::invalid_argument(
        "pose consensus needs at least 4 correspondences");

  RansacResult best;
  best.inlier_mask.assign(std::size_t(n), 0);

  double required = double(cfg.max_iters);
  int iter = 0;
  for (; iter < cfg.max_iters && iter < required; ++iter) {
    Rng rng = Rng::at(cfg.seed, std::uint64_t(iter));
    int i0 = int(rng.bounded(std::uint64_t(n)));
    int i1, i2;
    do {
      i1 = int(rng.bounded(std::uint64_t(n)));
    } while (i1 == i0);
    do {
      i2 = int(rng.bounded(std::uint64_t(n)));
    } while (i2 == i0 || i2 == i1);

    const std::array<Eigen::Vector3d, 3> pw = {world[std::size_t(i0)],
                                               world[std::size_t(i1)],
                                               world[std::size_t(i2)]};
    const std::array<Eigen::Vector3d, 3> rays = {
        intr.unproject(pixels[std::size_t(i0)].x(), pixels[std::size_t(i0)].y()),
        intr.unproject(pixels[std::size_t(i1)].x(), pixels[std::size_t(i1)].y()),
        intr.unproject(pixels[std::size_t(i2)].x(),
                       pixels[std::size_t(i2)].y())};

    std::vector<RigidPose> candidates;
    try {
      candidates = p3p_solve(pw, rays);
    } catch (const std::invalid_argument&) {
      continue;  // degenerate sample, draw again next iteration
    }
    for (const RigidPose& pose : candidates) {
      int count = 0;
      double err_sum = 0;
      std::vector<char> mask(std::size_t(n), 0);
      for (int i = 0; i < n; ++i) {
        const auto px = intr.project(pose.to_camera(world[std::size_t(i)]));
        if (!px) continue;
        const double e = (*px - pixels[std::size_t(i)]).norm();
        if (e <= cfg.threshold_px) {
          mask[std::size_t(i)] = 1;
          ++count;
          err_sum += e;
        }
      }
      const double mean_err =
          count > 0 ? err_sum / count : std::numeric_limits<double>::infinity();
      if (count > best.inlier_count ||
          (count == best.inlier_count && mean_err < best.mean_reproj_px)) {
        best.pose = pose;
        best.inlier_count = count;
        best.inlier_mask = std::move(mask);
        best.mean_reproj_px = mean_err;
        const double w = double(count) / n;
        const double denom = std::log(std::max(1e-12, 1.0 - w * w * w));
        if (denom < 0)
          required = std::min(required,
                              std::log(1.0 - cfg.confidence) / denom);
      }
    }
  }
  best.iterations_run = iter;
  best.success = best.inlier_count >= 4;
  if (!best.success) {
    best.inlier_count = 0;
    best.inlier_mask.assign(std::size_t(n), 0);
    best.mean_reproj_px = std::numeric_limits<double>::infinity();
  }
  return best;
}

}  // namespace imip
