#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "imip/binio.hpp"
#include "imip/rng.hpp"
#include "imip/tensor.hpp"

namespace imip {

// ---------------------------------------------------------------------------
// Representation sizes
// ---------------------------------------------------------------------------

// Every method spends 3 bytes per point on packed coordinates; descriptor
// methods add a per-point payload on top.
inline std::size_t representation_size_bytes(int n_points,
                                             std::size_t payload_bytes) {
  require(n_points >= 0, "negative point count");
  return std::size_t(n_points) * (3 + payload_bytes);
}

inline std::size_t raw_descriptor_payload_bytes(int d, int bytes_per_scalar) {
  require(d >= 1 && bytes_per_scalar >= 1, "bad descriptor shape");
  return std::size_t(d) * std::size_t(bytes_per_scalar);
}

// Projected coefficients are stored as float32.
inline std::size_t pca_descriptor_payload_bytes(int k) {
  require(k >= 1, "bad component count");
  return std::size_t(k) * 4;
}

inline std::size_t pq_descriptor_payload_bytes(int m, int k) {
  require(m >= 1 && k >= 2, "bad quantizer shape");
  const double bits = m * std::log2(double(k));
  return std::size_t(std::ceil(bits / 8.0 - 1e-9));
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaModel {
  int d = 0;
  int k = 0;
  Eigen::VectorXd mean;         // d
  Eigen::MatrixXd basis;        // d x k, orthonormal columns, descending
  Eigen::VectorXd eigenvalues;  // k, descending
};

// Top-k principal components of row-major samples. Columns are
// sign-normalized so their largest-magnitude entry is positive.
inline PcaModel pca_fit(const Eigen::MatrixXd& data, int k) {
  const int n = int(data.rows());
  const int d = int(data.cols());
  require(k >= 1, "component count must be positive");
  require(d >= k, "more components than dimensions");
  require(n > d, "need more samples than dimensions");

  PcaModel model;
  model.d = d;
  model.k = k;
  model.mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / double(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  require(solver.info() == Eigen::Success, "eigendecomposition failed");
  const Eigen::VectorXd evals = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd evecs = solver.eigenvectors();

  const double floor = std::max(1e-12, 1e-12 * std::abs(evals(d - 1)));
  int rank = 0;
  for (int i = 0; i < d; ++i)
    if (evals(i) > floor) ++rank;
  if (rank < k)
    throw std::invalid_argument("data rank " + std::to_string(rank) +
                                " is below the requested " +
                                std::to_string(k) + " components");

  model.basis.resize(d, k);
  model.eigenvalues.resize(k);
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd col = evecs.col(d - 1 - j);
    int peak = 0;
    for (int i = 1; i < d; ++i)
      if (std::abs(col(i)) > std::abs(col(peak))) peak = i;
    if (col(peak) < 0) col = -col;
    model.basis.col(j) = col;
    model.eigenvalues(j) = evals(d - 1 - j);
  }
  return model;
}

inline Eigen::VectorXd pca_project(const PcaModel& model,
                                   const Eigen::VectorXd& x) {
  require(int(x.size()) == model.d, "dimension mismatch");
  return model.basis.transpose() * (x - model.mean);
}

inline Eigen::VectorXd pca_reconstruct(const PcaModel& model,
                                       const Eigen::VectorXd& y) {
  require(int(y.size()) == model.k, "component count mismatch");
  return model.mean + model.basis * y;
}

// ---------------------------------------------------------------------------
// Product quantization
// ---------------------------------------------------------------------------

struct PqModel {
  int d = 0;  // full dimension
  int m = 0;  // subspaces, each of width d/m
  int k = 0;  // centroids per subspace
  std::vector<Eigen::MatrixXd> codebooks;  // m entries, each k x (d/m)
};

namespace detail {

// Seeded k-means++ followed by Lloyd iterations. Deterministic for a fixed
// seed; empty clusters are reseeded at the point farthest from its centroid.
inline Eigen::MatrixXd kmeans(const Eigen::MatrixXd& pts, int k, Rng& rng,
                              int max_iters = 100, double rel_tol = 1e-4) {
  const int n = int(pts.rows());
  const int ds = int(pts.cols());
  Eigen::MatrixXd centers(k, ds);

  centers.row(0) = pts.row(int(rng.bounded(std::uint64_t(n))));
  Eigen::VectorXd dist2 =
      (pts.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = dist2.sum();
    int pick = 0;
    if (total > 0) {
      const double r = rng.uniform() * total;
      double cum = 0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        cum += dist2(i);
        if (cum > r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = int(rng.bounded(std::uint64_t(n)));
    }
    centers.row(c) = pts.row(pick);
    dist2 = dist2.cwiseMin(
        (pts.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  std::vector<int> assign(std::size_t(n), 0);
  double prev_inertia = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < max_iters; ++iter) {
    double inertia = 0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (pts.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d2 = (pts.row(i) - centers.row(c)).squaredNorm();
        if (d2 < best_d) {
          best_d = d2;
          best = c;
        }
      }
      assign[std::size_t(i)] = best;
      inertia += best_d;
    }

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, ds);
    std::vector<int> counts(std::size_t(k), 0);
    for (int i = 0; i < n; ++i) {
      sums.row(assign[std::size_t(i)]) += pts.row(i);
      ++counts[std::size_t(assign[std::size_t(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[std::size_t(c)] > 0) {
        centers.row(c) = sums.row(c) / counts[std::size_t(c)];
      } else {
        int far = 0;
        double far_d = -1;
        for (int i = 0; i < n; ++i) {
          const double d2 =
              (pts.row(i) - centers.row(assign[std::size_t(i)])).squaredNorm();
          if (d2 > far_d) {
            far_d = d2;
            far = i;
          }
        }
        centers.row(c) = pts.row(far);
        assign[std::size_t(far)] = c;
      }
    }

    if (std::isfinite(prev_inertia) &&
        std::abs(prev_inertia - inertia) <=
            rel_tol * std::max(prev_inertia, 1e-12))
      break;
    prev_inertia = inertia;
  }
  return centers;
}

}  // namespace detail

inline PqModel pq_fit(const Eigen::MatrixXd& data, int m, int k,
                      std::uint64_t seed = 0) {
  const int n = int(data.rows());
  const int d = int(data.cols());
  require(m >= 1 && k >= 1, "bad quantizer shape");
  require(k <= 65535, "centroid count exceeds code width");
  require(d % m == 0, "dimension not divisible by subspace count");
  require(n >= k, "need at least as many points as centroids");

  PqModel model;
  model.d = d;
  model.m = m;
  model.k = k;
  const int ds = d / m;
  Rng rng(seed);
  for (int s = 0; s < m; ++s)
    model.codebooks.push_back(
        detail::kmeans(data.middleCols(s * ds, ds), k, rng));
  return model;
}

// Nearest centroid per subspace; distance ties go to the lowest index.
inline std::vector<std::uint16_t> pq_encode(const PqModel& model,
                                            const Eigen::VectorXd& x) {
  require(int(x.size()) == model.d, "dimension mismatch");
  const int ds = model.d / model.m;
  std::vector<std::uint16_t> codes(std::size_t(model.m));
  for (int s = 0; s < model.m; ++s) {
    const Eigen::VectorXd sub = x.segment(s * ds, ds);
    int best = 0;
    double best_d =
        (model.codebooks[std::size_t(s)].row(0).transpose() - sub)
            .squaredNorm();
    for (int c = 1; c < model.k; ++c) {
      const double d2 =
          (model.codebooks[std::size_t(s)].row(c).transpose() - sub)
              .squaredNorm();
      if (d2 < best_d) {
        best_d = d2;
        best = c;
      }
    }
    codes[std::size_t(s)] = std::uint16_t(best);
  }
  return codes;
}

inline Eigen::VectorXd pq_decode(const PqModel& model,
                                 const std::vector<std::uint16_t>& codes) {
  require(int(codes.size()) == model.m, "code count mismatch");
  const int ds = model.d / model.m;
  Eigen::VectorXd x(model.d);
  for (int s = 0; s < model.m; ++s) {
    require(codes[std::size_t(s)] < model.k, "code out of range");
    x.segment(s * ds, ds) =
        model.codebooks[std::size_t(s)].row(codes[std::size_t(s)]).transpose();
  }
  return x;
}

// ---------------------------------------------------------------------------
// Descriptor files: magic, version, N, d, scalar width, then row-major
// little-endian values.
// ---------------------------------------------------------------------------

inline constexpr char kDescriptorMagic[4] = {'I', 'M', 'D', 'S'};
inline constexpr std::uint32_t kDescriptorFormatVersion = 1;

struct DescriptorSet {
  Eigen::MatrixXd data;  // N x d
  int scalar_width = 4;  // 4 or 8
};

inline void save_descriptors(const Eigen::MatrixXd& data, int scalar_width,
                             const std::string& path) {
  require(scalar_width == 4 || scalar_width == 8, "scalar width must be 4 or 8");
  ByteWriter w;
  w.bytes(kDescriptorMagic, 4);
  w.u32(kDescriptorFormatVersion);
  w.u32(std::uint32_t(data.rows()));
  w.u32(std::uint32_t(data.cols()));
  w.u32(std::uint32_t(scalar_width));
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      if (scalar_width == 4)
        w.f32(float(data(i, j)));
      else
        w.f64(data(i, j));
    }
  write_file_bytes(path, w.buf);
}

inline DescriptorSet load_descriptors(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kDescriptorMagic, 4) != 0)
    throw FormatError("not a descriptor file: " + path);
  const std::uint32_t version = r.u32();
  if (version != kDescriptorFormatVersion)
    throw VersionError("unsupported descriptor file version " +
                       std::to_string(version));
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint32_t width = r.u32();
  if (width != 4 && width != 8)
    throw FormatError("bad scalar width in descriptor file");
  DescriptorSet set;
  set.scalar_width = int(width);
  set.data.resize(n, d);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < d; ++j)
      set.data(i, j) = width == 4 ? double(r.f32()) : r.f64();
  if (r.remaining() != 0)
    throw FormatError("trailing bytes in descriptor file");
  return set;
}

// ---------------------------------------------------------------------------
// Model files (checksummed)
// ---------------------------------------------------------------------------

inline constexpr char kPcaMagic[4] = {'I', 'M', 'P', 'C'};
inline constexpr char kPqMagic[4] = {'I', 'M', 'P', 'Q'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

inline void save_pca(const PcaModel& model, const std::string& path) {
  ByteWriter payload;
  payload.u32(std::uint32_t(model.d));
  payload.u32(std::uint32_t(model.k));
  for (int i = 0; i < model.d; ++i) payload.f64(model.mean(i));
  for (int j = 0; j < model.k; ++j)
    for (int i = 0; i < model.d; ++i) payload.f64(model.basis(i, j));
  for (int j = 0; j < model.k; ++j) payload.f64(model.eigenvalues(j));

  ByteWriter w;
  w.bytes(kPcaMagic, 4);
  w.u32(kModelFormatVersion);
  w.u32(crc32(payload.buf.data(), payload.buf.size()));
  w.bytes(payload.buf.data(), payload.buf.size());
  write_file_bytes(path, w.buf);
}

inline PcaModel load_pca(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kPcaMagic, 4) != 0)
    throw FormatError("not a pca model file: " + path);
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion)
    throw VersionError("unsupported pca model version " +
                       std::to_string(version));
  const std::uint32_t stored_crc = r.u32();
  if (crc32(bytes.data() + r.pos(), r.remaining()) != stored_crc)
    throw ChecksumError("pca model checksum mismatch: " + path);
  PcaModel model;
  model.d = int(r.u32());
  model.k = int(r.u32());
  if (model.d < 1 || model.k < 1 || model.k > model.d)
    throw FormatError("bad pca model shape");
  model.mean.resize(model.d);
  model.basis.resize(model.d, model.k);
  model.eigenvalues.resize(model.k);
  for (int i = 0; i < model.d; ++i) model.mean(i) = r.f64();
  for (int j = 0; j < model.k; ++j)
    for (int i = 0; i < model.d; ++i) model.basis(i, j) = r.f64();
  for (int j = 0; j < model.k; ++j) model.eigenvalues(j) = r.f64();
  if (r.remaining() != 0) throw FormatError("trailing bytes in pca model file");
  return model;
}

inline void save_pq(const PqModel& model, const std::string& path) {
  ByteWriter payload;
  payload.u32(std::uint32_t(model.d));
  payload.u32(std::uint32_t(model.m));
  payload.u32(std::uint32_t(model.k));
  const int ds = model.d / model.m;
  for (int s = 0; s < model.m; ++s)
    for (int c = 0; c < model.k; ++c)
      for (int j = 0; j < ds; ++j)
        payload.f64(model.codebooks[std::size_t(s)](c, j));

  ByteWriter w;
  w.bytes(kPqMagic, 4);
  w.u32(kModelFormatVersion);
  w.u32(crc32(payload.buf.data(), payload.buf.size()));
  w.bytes(payload.buf.data(), payload.buf.size());
  write_file_bytes(path, w.buf);
}

inline PqModel load_pq(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kPqMagic, 4) != 0)
    throw FormatError("not a pq model file: " + path);
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion)
    throw VersionError("unsupported pq model version " +
                       std::to_string(version));
  const std::uint32_t stored_crc = r.u32();
  if (crc32(bytes.data() + r.pos(), r.remaining()) != stored_crc)
    throw ChecksumError("pq model checksum mismatch: " + path);
  PqModel model;
  model.d = int(r.u32());
  model.m = int(r.u32());
  model.k = int(r.u32());
  if (model.d < 1 || model.m < 1 || model.k < 1 || model.d % model.m != 0)
    throw FormatError("bad pq model shape");
  const int ds = model.d / model.m;
  for (int s = 0; s < model.m; ++s) {
    Eigen::MatrixXd book(model.k, ds);
    for (int c = 0; c < model.k; ++c)
      for (int j = 0; j < ds; ++j) book(c, j) = r.f64();
    model.codebooks.push_back(std::move(book));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes in pq model file");
  return model;
}

}  // namespace imip
