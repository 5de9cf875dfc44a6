#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "imip/geometry.hpp"
#include "imip/image.hpp"
#include "imip/rng.hpp"

namespace imip {

// Band-limited random texture: a seeded sum of sinusoids. Being closed-form
// it can be evaluated at exact subpixel positions, so warped renders carry
// no resampling error.
struct SmoothTexture {
  struct Wave {
    double amp, kx, ky, phase;
  };
  std::vector<Wave> waves;

  static SmoothTexture make(std::uint64_t seed, int n_waves = 16,
                            double lambda_min = 6.0, double lambda_max = 48.0) {
    require(n_waves > 0, "need at least one wave");
    require(lambda_min > 0 && lambda_max >= lambda_min, "bad wavelength range");
    Rng rng(seed);
    SmoothTexture tex;
    double amp_sum = 0;
    for (int i = 0; i < n_waves; ++i) {
      Wave w;
      const double theta = rng.uniform(0.0, 2.0 * M_PI);
      const double lambda =
          std::exp(rng.uniform(std::log(lambda_min), std::log(lambda_max)));
      const double k = 2.0 * M_PI / lambda;
      w.kx = k * std::cos(theta);
      w.ky = k * std::sin(theta);
      w.phase = rng.uniform(0.0, 2.0 * M_PI);
      w.amp = rng.uniform(0.5, 1.0);
      amp_sum += w.amp;
      tex.waves.push_back(w);
    }
    for (auto& w : tex.waves) w.amp *= 0.48 / amp_sum;  // range within (0, 1)
    return tex;
  }

  double value(double x, double y) const {
    double v = 0.5;
    for (const auto& w : waves)
      v += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
    return v;
  }
};

template <typename S = float>
inline Image<S> render_texture(const SmoothTexture& tex, int width, int height,
                               double origin_x = 0.0, double origin_y = 0.0) {
  Image<S> img(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      img.at(x, y) = S(tex.value(origin_x + x, origin_y + y));
  return img;
}

// Renders the view related to the base render by x_out = h * x_base, i.e.
// pixel q of the output shows the texture at h^-1(q).
template <typename S = float>
inline Image<S> render_warped(const SmoothTexture& tex,
                              const Eigen::Matrix3d& h, int width,
                              int height) {
  const Eigen::Matrix3d hinv = h.inverse();
  Image<S> img(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto p = apply_homography(hinv, double(x), double(y));
      img.at(x, y) = p ? S(tex.value(p->x(), p->y())) : S(0.5);
    }
  return img;
}

template <typename S>
inline void add_gaussian_noise(Image<S>& img, double sigma,
                               std::uint64_t seed) {
  Rng rng(seed);
  for (auto& v : img.data) v = S(double(v) + sigma * rng.normal());
}

// A textured plane at world z = plane_z observed by pinhole cameras. Views,
// depth maps and exact inter-view homographies all come from the same
// analytic model, so they are mutually consistent to machine precision.
struct PlaneScene {
  SmoothTexture tex;
  CameraIntrinsics intr;
  double plane_z = 5.0;
  double tex_scale = 40.0;  // texture units per world unit

  // cam is world-from-camera. A camera looking down +z from z < plane_z
  // sees the plane everywhere.
  template <typename S = float>
  Image<S> render(const RigidPose& cam) const {
    Image<S> img(intr.width, intr.height);
    for (int v = 0; v < intr.height; ++v)
      for (int u = 0; u < intr.width; ++u) {
        const Eigen::Vector3d dir = cam.R * intr.unproject(u, v);
        double val = 0.5;
        if (std::abs(dir.z()) > 1e-12) {
          const double s = (plane_z - cam.t.z()) / dir.z();
          if (s > 0) {
            const Eigen::Vector3d pw = cam.t + s * dir;
            val = tex.value(pw.x() * tex_scale, pw.y() * tex_scale);
          }
        }
        img.at(u, v) = S(val);
      }
    return img;
  }

  // Depth of the plane intersection along each pixel ray (camera z), 0 where
  // the ray misses the plane.
  template <typename S = float>
  Image<S> depth_map(const RigidPose& cam) const {
    Image<S> img(intr.width, intr.height);
    for (int v = 0; v < intr.height; ++v)
      for (int u = 0; u < intr.width; ++u) {
        const Eigen::Vector3d f = intr.unproject(u, v);
        const Eigen::Vector3d dir = cam.R * f;
        double z = 0;
        if (std::abs(dir.z()) > 1e-12) {
          const double s = (plane_z - cam.t.z()) / dir.z();
          if (s > 0) z = s * f.z();  // f.z() == 1
        }
        img.at(u, v) = S(z);
      }
    return img;
  }

  // Pixel map from view a to view b induced by the plane:
  //   x_b ~ K (R_ba + t_ba n_a^T / d_a) K^-1 x_a
  // with the plane written as n_a . X_a = d_a in camera-a coordinates.
  Eigen::Matrix3d homography(const RigidPose& cam_a,
                             const RigidPose& cam_b) const {
    const Eigen::Matrix3d r_ba = cam_b.R.transpose() * cam_a.R;
    const Eigen::Vector3d t_ba = cam_b.R.transpose() * (cam_a.t - cam_b.t);
    const Eigen::Vector3d n_a = cam_a.R.transpose() * Eigen::Vector3d(0, 0, 1);
    const double d_a = plane_z - cam_a.t.z();
    require(std::abs(d_a) > 1e-9, "camera center lies on the plane");
    const Eigen::Matrix3d k = intr.k_matrix();
    Eigen::Matrix3d h =
        k * (r_ba + t_ba * n_a.transpose() / d_a) * k.inverse();
    if (std::abs(h(2, 2)) > 1e-12) h /= h(2, 2);
    return h;
  }

  // World point seen by pixel (u, v) of the given view, if the ray hits the
  // plane in front of the camera.
  std::optional<Eigen::Vector3d> backproject(const RigidPose& cam, double u,
                                             double v) const {
    const Eigen::Vector3d dir = cam.R * intr.unproject(u, v);
    if (std::abs(dir.z()) < 1e-12) return std::nullopt;
    const double s = (plane_z - cam.t.z()) / dir.z();
    if (s <= 0) return std::nullopt;
    return cam.t + s * dir;
  }
};

inline Eigen::Matrix3d axis_angle_rotation(const Eigen::Vector3d& axis,
                                           double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

}  // namespace imip
