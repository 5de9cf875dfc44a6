#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "imip/adam.hpp"
#include "imip/correspondence.hpp"
#include "imip/extraction.hpp"
#include "imip/image.hpp"
#include "imip/network.hpp"

namespace imip {

// ---------------------------------------------------------------------------
// Patch gathering
// ---------------------------------------------------------------------------

// r x r crop centered on (cx, cy); fails when the window leaves the image.
template <typename S>
inline std::optional<Tensor4<S>> gather_patch(const Image<S>& img, int cx,
                                              int cy, int r) {
  require(r >= 1 && r % 2 == 1, "patch side must be odd");
  const int half = r / 2;
  if (cx - half < 0 || cy - half < 0 || cx + half > img.width - 1 ||
      cy + half > img.height - 1)
    return std::nullopt;
  Tensor4<S> patch(1, r, r, 1);
  for (int py = 0; py < r; ++py)
    for (int px = 0; px < r; ++px)
      patch.at(0, py, px, 0) = img.at(cx - half + px, cy - half + py);
  return patch;
}

// ---------------------------------------------------------------------------
// Response matrices
// ---------------------------------------------------------------------------

// p[i][j] = response of channel j to the patch belonging to channel i.
// Rows whose patch could not be gathered are invalid and must contribute
// nothing to any loss.
template <typename S>
struct ResponseMatrix {
  int n = 0;
  std::vector<S> p;             // n*n, row-major
  std::vector<char> row_valid;  // per row

  explicit ResponseMatrix(int n_ = 0)
      : n(n_), p(std::size_t(n_) * n_, S(0)), row_valid(std::size_t(n_), 0) {}

  S& at(int i, int j) { return p[std::size_t(i) * n + j]; }
  const S& at(int i, int j) const { return p[std::size_t(i) * n + j]; }
};

// A response matrix together with the compact forward pass that produced it,
// so losses can be backpropagated into the network.
template <typename S>
struct ResponseMatrixBuild {
  ResponseMatrix<S> matrix;
  Tensor4<S> batch;            // [m, r, r, 1], only gatherable rows
  std::vector<int> batch_rows; // batch row -> channel
  PatchTape<S> tape;
};

// Gathers the given per-channel centers (nullopt = skip row), runs the
// patch forward pass, and scatters responses into an n x n matrix.
template <typename S>
inline ResponseMatrixBuild<S> build_response_matrix(
    const Image<S>& img, const std::vector<std::optional<std::array<int, 2>>>&
                             centers,
    const NetworkParams<S>& net, bool with_tape) {
  const int n = net.config.n_channels;
  require(int(centers.size()) == n, "one center per channel expected");
  const int r = receptive_field(net.config);
  const int half = r / 2;

  ResponseMatrixBuild<S> build;
  build.matrix = ResponseMatrix<S>(n);

  for (int i = 0; i < n; ++i) {
    if (!centers[std::size_t(i)]) continue;
    const auto [cx, cy] = *centers[std::size_t(i)];
    if (cx - half < 0 || cy - half < 0 || cx + half > img.width - 1 ||
        cy + half > img.height - 1)
      continue;
    build.batch_rows.push_back(i);
  }

  const std::int64_t m = std::int64_t(build.batch_rows.size());
  build.batch = Tensor4<S>(m, r, r, 1);
  for (std::int64_t row = 0; row < m; ++row) {
    const int ch = build.batch_rows[std::size_t(row)];
    const auto [cx, cy] = *centers[std::size_t(ch)];
    for (int py = 0; py < r; ++py)
      for (int px = 0; px < r; ++px)
        build.batch.at(row, py, px, 0) =
            img.at(cx - half + px, cy - half + py);
  }

  const Tensor4<S> out =
      forward_patches(build.batch, net, with_tape ? &build.tape : nullptr);
  for (std::int64_t row = 0; row < m; ++row) {
    const int ch = build.batch_rows[std::size_t(row)];
    build.matrix.row_valid[std::size_t(ch)] = 1;
    for (int j = 0; j < n; ++j)
      build.matrix.at(ch, j) = out.at(row, 0, 0, j);
  }
  return build;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline constexpr double kLossClamp = 1e-6;

namespace detail {

// -log(clamped p): value and d/dp. The derivative is exactly 0 in the
// clamped region (the clamp is part of the function being differentiated).
inline void nll_of(double p, double& value, double& grad) {
  if (p < kLossClamp) {
    value = -std::log(kLossClamp);
    grad = 0;
  } else if (p > 1.0 - kLossClamp) {
    value = -std::log(1.0 - kLossClamp);
    grad = 0;
  } else {
    value = -std::log(p);
    grad = -1.0 / p;
  }
}

// -log(1 - clamped p): value and d/dp.
inline void nll_of_complement(double p, double& value, double& grad) {
  if (p < kLossClamp) {
    value = -std::log(1.0 - kLossClamp);
    grad = 0;
  } else if (p > 1.0 - kLossClamp) {
    value = -std::log(kLossClamp);
    grad = 0;
  } else {
    value = -std::log(1.0 - p);
    grad = 1.0 / (1.0 - p);
  }
}

}  // namespace detail

// Loss value plus its gradient with respect to every matrix entry.
template <typename S>
struct LossGrad {
  double value = 0;
  std::vector<S> grad;  // n*n, row-major, zero where no term touches

  explicit LossGrad(int n = 0) : grad(std::size_t(n) * n, S(0)) {}
};

// Diagonal cross-entropy: promote p_ii on inlier channels, suppress it on
// outlier channels. Unassigned and invalid rows contribute nothing.
template <typename S>
inline LossGrad<S> loss_inlier(const ResponseMatrix<S>& m,
                               const std::vector<MatchLabel>& labels) {
  require(int(labels.size()) == m.n, "one label per channel expected");
  LossGrad<S> out(m.n);
  for (int i = 0; i < m.n; ++i) {
    if (!m.row_valid[std::size_t(i)]) continue;
    double v = 0, g = 0;
    if (labels[std::size_t(i)] == MatchLabel::kInlier)
      detail::nll_of(double(m.at(i, i)), v, g);
    else if (labels[std::size_t(i)] == MatchLabel::kOutlier)
      detail::nll_of_complement(double(m.at(i, i)), v, g);
    else
      continue;
    out.value += v;
    out.grad[std::size_t(i) * m.n + i] = S(g);
  }
  return out;
}

// Off-diagonal suppression on inlier rows: every other channel's response to
// an inlier's patch is pushed toward 0.
template <typename S>
inline LossGrad<S> loss_redundancy(const ResponseMatrix<S>& m,
                                   const std::vector<MatchLabel>& labels) {
  require(int(labels.size()) == m.n, "one label per channel expected");
  LossGrad<S> out(m.n);
  for (int i = 0; i < m.n; ++i) {
    if (!m.row_valid[std::size_t(i)]) continue;
    if (labels[std::size_t(i)] != MatchLabel::kInlier) continue;
    for (int j = 0; j < m.n; ++j) {
      if (j == i) continue;
      double v = 0, g = 0;
      detail::nll_of_complement(double(m.at(i, j)), v, g);
      out.value += v;
      out.grad[std::size_t(i) * m.n + j] = S(g);
    }
  }
  return out;
}

// Diagonal promotion on the correspondence-patch matrix for outlier rows:
// the channel should have fired at the true corresponding location.
template <typename S>
inline LossGrad<S> loss_correspondence(const ResponseMatrix<S>& m_corr,
                                       const std::vector<MatchLabel>& labels) {
  require(int(labels.size()) == m_corr.n, "one label per channel expected");
  LossGrad<S> out(m_corr.n);
  for (int i = 0; i < m_corr.n; ++i) {
    if (!m_corr.row_valid[std::size_t(i)]) continue;
    if (labels[std::size_t(i)] != MatchLabel::kOutlier) continue;
    double v = 0, g = 0;
    detail::nll_of(double(m_corr.at(i, i)), v, g);
    out.value += v;
    out.grad[std::size_t(i) * m_corr.n + i] = S(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training step
// ---------------------------------------------------------------------------

struct LossReport {
  double l_inl = 0, l_red = 0, l_cor = 0, total = 0;
  int inliers = 0, outliers = 0, unassigned = 0;
  bool skipped = false;  // true when no patch produced any loss term
};

struct TrainStepConfig {
  double threshold_px = 3.0;
  double w_inl = 1.0, w_red = 1.0, w_cor = 1.0;
  int margin = -1;  // extraction margin; -1 means (r-1)/2
};

namespace detail {

template <typename S>
inline std::vector<std::size_t> adam_block_sizes(const NetworkParams<S>& net) {
  std::vector<std::size_t> sizes;
  for (const auto& l : net.layers) {
    sizes.push_back(l.kernels.size());
    sizes.push_back(l.bias.size());
  }
  return sizes;
}

template <typename S>
inline std::vector<AdamBlock<S>> adam_blocks(NetworkParams<S>& net,
                                             const NetworkGrads<S>& grads) {
  std::vector<AdamBlock<S>> blocks;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::string id = "layer" + std::to_string(l);
    blocks.push_back({net.layers[l].kernels.data(), grads[l].kernels.data(),
                      net.layers[l].kernels.size(), id + ".kernels"});
    blocks.push_back({net.layers[l].bias.data(), grads[l].bias.data(),
                      net.layers[l].bias.size(), id + ".bias"});
  }
  return blocks;
}

// Scatters matrix-entry gradients back onto the compact batch output and
// runs the network backward pass.
template <typename S>
inline void backprop_matrix(const NetworkParams<S>& net,
                            const ResponseMatrixBuild<S>& build,
                            const std::vector<const LossGrad<S>*>& losses,
                            const std::vector<double>& weights,
                            NetworkGrads<S>& grads) {
  const int n = build.matrix.n;
  const std::int64_t m = std::int64_t(build.batch_rows.size());
  if (m == 0) return;
  Tensor4<S> g(m, 1, 1, n);
  bool any = false;
  for (std::int64_t row = 0; row < m; ++row) {
    const int ch = build.batch_rows[std::size_t(row)];
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < losses.size(); ++k)
        acc += weights[k] * double(losses[k]->grad[std::size_t(ch) * n + j]);
      g.at(row, 0, 0, j) = S(acc);
      any = any || acc != 0;
    }
  }
  if (any) backward_patches(net, build.tape, g, grads);
}

}  // namespace detail

// Per-channel labels for one image pair, derived from extraction + Psi.
inline std::vector<MatchLabel> labels_of(const LabeledMatchSet& set) {
  std::vector<MatchLabel> labels;
  labels.reserve(set.matches.size());
  for (const auto& m : set.matches) labels.push_back(m.label);
  return labels;
}

struct TrainStepResult {
  LossReport loss;
  LabeledMatchSet labels;
};

// One full training step on an image pair:
//  1. full-image forward on both images (no gradients),
//  2. per-channel argmax extraction and channel matching,
//  3. labeling against the true correspondences,
//  4. four patch batches (interest + correspondence, per image), their
//     response matrices and the three losses, applied symmetrically,
//  5. one Adam update.
template <typename S>
inline TrainStepResult train_step(const Image<S>& img_a, const Image<S>& img_b,
                                  const CorrespondenceProvider& psi,
                                  NetworkParams<S>& net, AdamState<S>& adam,
                                  const TrainStepConfig& cfg = {}) {
  const int r = receptive_field(net.config);
  const int margin = cfg.margin >= 0 ? cfg.margin : (r - 1) / 2;
  const int n = net.config.n_channels;

  const Tensor4<S> stack_a = forward_full(img_a.to_tensor(), net);
  const Tensor4<S> stack_b = forward_full(img_b.to_tensor(), net);
  const InterestPointSet pts_a = extract_points(stack_a, margin);
  const InterestPointSet pts_b = extract_points(stack_b, margin);
  const MatchSet matches = match_by_channel(pts_a, pts_b);

  TrainStepResult res;
  res.labels = label_matches(matches, psi, img_a.width, img_a.height,
                             img_b.width, img_b.height, cfg.threshold_px);
  const std::vector<MatchLabel> labels = labels_of(res.labels);

  // Interest-point patch centers: the extracted argmax locations.
  std::vector<std::optional<std::array<int, 2>>> centers_a(static_cast<std::size_t>(n));
  std::vector<std::optional<std::array<int, 2>>> centers_b(static_cast<std::size_t>(n));
  // Correspondence patch centers: the true location, in this image, of the
  // other image's point. Only outlier rows feed the correspondence loss.
  std::vector<std::optional<std::array<int, 2>>> corr_a(static_cast<std::size_t>(n));
  std::vector<std::optional<std::array<int, 2>>> corr_b(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    centers_a[std::size_t(i)] = {{pts_a.points[std::size_t(i)].x,
                                  pts_a.points[std::size_t(i)].y}};
    centers_b[std::size_t(i)] = {{pts_b.points[std::size_t(i)].x,
                                  pts_b.points[std::size_t(i)].y}};
    const LabeledMatch& lm = res.labels.matches[std::size_t(i)];
    if (lm.label != MatchLabel::kOutlier) continue;
    if (lm.bwd)
      corr_a[std::size_t(i)] = {{int(std::lround(lm.bwd->x())),
                                 int(std::lround(lm.bwd->y()))}};
    if (lm.fwd)
      corr_b[std::size_t(i)] = {{int(std::lround(lm.fwd->x())),
                                 int(std::lround(lm.fwd->y()))}};
  }

  auto ip_a = build_response_matrix(img_a, centers_a, net, true);
  auto ip_b = build_response_matrix(img_b, centers_b, net, true);
  auto cp_a = build_response_matrix(img_a, corr_a, net, true);
  auto cp_b = build_response_matrix(img_b, corr_b, net, true);

  const LossGrad<S> inl_a = loss_inlier(ip_a.matrix, labels);
  const LossGrad<S> inl_b = loss_inlier(ip_b.matrix, labels);
  const LossGrad<S> red_a = loss_redundancy(ip_a.matrix, labels);
  const LossGrad<S> red_b = loss_redundancy(ip_b.matrix, labels);
  const LossGrad<S> cor_a = loss_correspondence(cp_a.matrix, labels);
  const LossGrad<S> cor_b = loss_correspondence(cp_b.matrix, labels);

  LossReport& rep = res.loss;
  rep.l_inl = inl_a.value + inl_b.value;
  rep.l_red = red_a.value + red_b.value;
  rep.l_cor = cor_a.value + cor_b.value;
  rep.total =
      cfg.w_inl * rep.l_inl + cfg.w_red * rep.l_red + cfg.w_cor * rep.l_cor;
  rep.inliers = res.labels.inlier_count();
  rep.outliers = res.labels.outlier_count();
  rep.unassigned = res.labels.unassigned_count();

  const bool any_term =
      ip_a.batch_rows.size() + ip_b.batch_rows.size() + cp_a.batch_rows.size() +
          cp_b.batch_rows.size() >
      0;
  if (!any_term || (rep.inliers == 0 && rep.outliers == 0)) {
    rep.skipped = true;  // nothing to learn from this pair
    return res;
  }

  NetworkGrads<S> grads = zero_grads(net);
  detail::backprop_matrix(net, ip_a, {&inl_a, &red_a},
                          {cfg.w_inl, cfg.w_red}, grads);
  detail::backprop_matrix(net, ip_b, {&inl_b, &red_b},
                          {cfg.w_inl, cfg.w_red}, grads);
  detail::backprop_matrix(net, cp_a, {&cor_a}, {cfg.w_cor}, grads);
  detail::backprop_matrix(net, cp_b, {&cor_b}, {cfg.w_cor}, grads);

  adam_step(detail::adam_blocks(net, grads), adam);
  return res;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

template <typename S>
struct EvalPair {
  const Image<S>* image_a = nullptr;
  const Image<S>* image_b = nullptr;
  const CorrespondenceProvider* psi = nullptr;
};

struct ValidationSummary {
  double mean_inliers = 0;
  double median_inliers = 0;
  double mean_matching_score = 0;
  int n_pairs = 0;
};

template <typename S>
inline int pair_inlier_count(const Image<S>& img_a, const Image<S>& img_b,
                             const CorrespondenceProvider& psi,
                             const NetworkParams<S>& net,
                             double threshold_px = 3.0, int margin = -1) {
  const int r = receptive_field(net.config);
  const int m = margin >= 0 ? margin : (r - 1) / 2;
  const Tensor4<S> sa = forward_full(img_a.to_tensor(), net);
  const Tensor4<S> sb = forward_full(img_b.to_tensor(), net);
  const auto labels =
      label_matches(match_by_channel(extract_points(sa, m),
                                     extract_points(sb, m)),
                    psi, img_a.width, img_a.height, img_b.width, img_b.height,
                    threshold_px);
  return labels.inlier_count();
}

// Pure evaluation over held-out pairs; parameters are never touched.
template <typename S>
inline ValidationSummary validate(const NetworkParams<S>& net,
                                  const std::vector<EvalPair<S>>& pairs,
                                  double threshold_px = 3.0, int margin = -1) {
  require(!pairs.empty(), "validation needs at least one pair");
  ValidationSummary sum;
  std::vector<int> counts;
  for (const auto& p : pairs) {
    const int c = pair_inlier_count(*p.image_a, *p.image_b, *p.psi, net,
                                    threshold_px, margin);
    counts.push_back(c);
    sum.mean_inliers += c;
    sum.mean_matching_score += double(c) / net.config.n_channels;
  }
  sum.n_pairs = int(pairs.size());
  sum.mean_inliers /= sum.n_pairs;
  sum.mean_matching_score /= sum.n_pairs;
  std::sort(counts.begin(), counts.end());
  const std::size_t mid = counts.size() / 2;
  sum.median_inliers = counts.size() % 2 == 1
                           ? counts[mid]
                           : (counts[mid - 1] + counts[mid]) / 2.0;
  return sum;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

template <typename S>
using PairSource = std::function<EvalPair<S>(std::int64_t step)>;

struct TrainLoopConfig {
  std::int64_t iterations = 100000;
  std::int64_t val_every = 1000;
  double lr = 1e-5;
  TrainStepConfig step;
};

struct TrainLogRow {
  std::int64_t step = 0;
  double l_inl = 0, l_red = 0, l_cor = 0;
  int inlier_count = 0;
  double val_inlier_mean = std::numeric_limits<double>::quiet_NaN();
};

template <typename S>
struct TrainResult {
  NetworkParams<S> best_params;
  NetworkParams<S> final_params;
  std::vector<TrainLogRow> log;
  double best_val_inliers = -1;
  std::int64_t best_step = -1;
};

// Fixed-budget loop with periodic validation snapshots. The returned best
// parameters are the snapshot with the highest validation inlier mean (the
// final parameters when validation never ran).
template <typename S>
inline TrainResult<S> train(NetworkParams<S> net, const PairSource<S>& source,
                            const std::vector<EvalPair<S>>& val_pairs,
                            const TrainLoopConfig& cfg) {
  AdamConfig<S> acfg;
  acfg.lr = S(cfg.lr);
  AdamState<S> adam(acfg, detail::adam_block_sizes(net));

  TrainResult<S> res;
  res.best_params = net;

  for (std::int64_t step = 0; step < cfg.iterations; ++step) {
    const EvalPair<S> sample = source(step);
    const TrainStepResult sr =
        train_step(*sample.image_a, *sample.image_b, *sample.psi, net, adam,
                   cfg.step);
    if (!std::isfinite(sr.loss.total))
      throw std::runtime_error("non-finite loss at step " +
                               std::to_string(step));

    TrainLogRow row;
    row.step = step;
    row.l_inl = sr.loss.l_inl;
    row.l_red = sr.loss.l_red;
    row.l_cor = sr.loss.l_cor;
    row.inlier_count = sr.loss.inliers;

    const bool val_now = !val_pairs.empty() && cfg.val_every > 0 &&
                         (step + 1) % cfg.val_every == 0;
    if (val_now) {
      const ValidationSummary v =
          validate(net, val_pairs, cfg.step.threshold_px, cfg.step.margin);
      row.val_inlier_mean = v.mean_inliers;
      if (v.mean_inliers > res.best_val_inliers) {
        res.best_val_inliers = v.mean_inliers;
        res.best_params = net;
        res.best_step = step;
      }
    }
    res.log.push_back(row);
  }

  res.final_params = net;
  if (res.best_step < 0) res.best_params = net;
  return res;
}

// CSV: step, losses, train inlier count, validation mean (blank when the
// step ran no validation).
inline void save_training_log(const std::vector<TrainLogRow>& log,
                              const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "step,L_inl,L_red,L_cor,inlier_count,val_inlier_mean\n";
  char buf[256];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof buf, "%lld,%.6f,%.6f,%.6f,%d,",
                  static_cast<long long>(row.step), row.l_inl, row.l_red,
                  row.l_cor, row.inlier_count);
    os << buf;
    if (std::isfinite(row.val_inlier_mean)) {
      std::snprintf(buf, sizeof buf, "%.6f", row.val_inlier_mean);
      os << buf;
    }
    os << "\n";
  }
}

}  // namespace imip
