#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. They deliberately avoid the library's own code paths: plain loops
// instead of Eigen expressions, brute force instead of search.

#include <fedbatch/compress.hpp>
#include <fedbatch/datagen.hpp>
#include <fedbatch/nncore.hpp>
#include <fedbatch/perfmodel.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace oracle {

using fedbatch::Batch;
using fedbatch::ModelSpec;
using fedbatch::ParamVector;

/// Cross-entropy of one sample, recomputed with scalar loops.
inline double sample_loss(const ModelSpec& spec, const ParamVector& w, const double* x, int label) {
  std::vector<double> in(x, x + spec.layer_widths[0]);
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
    const int n_in = spec.layer_widths[l];
    const int n_out = spec.layer_widths[l + 1];
    const std::size_t w_off = offset;
    const std::size_t b_off = offset + static_cast<std::size_t>(n_in) * n_out;
    std::vector<double> out(static_cast<std::size_t>(n_out));
    for (int j = 0; j < n_out; ++j) {
      double z = w[static_cast<Eigen::Index>(b_off + j)];
      for (int i = 0; i < n_in; ++i) {
        z += w[static_cast<Eigen::Index>(w_off + static_cast<std::size_t>(i) * n_out + j)] * in[i];
      }
      const bool hidden = l + 2 < spec.layer_widths.size();
      if (hidden) z = spec.activation == fedbatch::Activation::relu ? std::max(0.0, z) : std::tanh(z);
      out[j] = z;
    }
    in = std::move(out);
    offset = b_off + n_out;
  }
  const double top = *std::max_element(in.begin(), in.end());
  double sum = 0.0;
  for (double z : in) sum += std::exp(z - top);
  return -(in[label] - top - std::log(sum));
}

inline double batch_loss(const ModelSpec& spec, const ParamVector& w, const Batch& batch) {
  double total = 0.0;
  for (Eigen::Index s = 0; s < batch.size(); ++s) {
    std::vector<double> row(static_cast<std::size_t>(batch.features.cols()));
    for (Eigen::Index c = 0; c < batch.features.cols(); ++c) row[c] = batch.features(s, c);
    total += sample_loss(spec, w, row.data(), batch.labels[static_cast<std::size_t>(s)]);
  }
  return total / static_cast<double>(batch.size());
}

/// Central finite differences of the scalar-loop loss.
inline ParamVector finite_difference(const ModelSpec& spec, const ParamVector& w, const Batch& batch,
                                     double h = 1e-5) {
  ParamVector g(w.size());
  ParamVector probe = w;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    probe[i] = w[i] + h;
    const double up = batch_loss(spec, probe, batch);
    probe[i] = w[i] - h;
    const double down = batch_loss(spec, probe, batch);
    probe[i] = w[i];
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// Max over coordinates of |a - b| / max(|a|, |b|, floor).
inline double max_rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

inline Batch random_batch(int rows, int dim, int classes, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> label(0, classes - 1);
  Batch b;
  b.features.resize(rows, dim);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < dim; ++c) b.features(r, c) = normal(rng);
    b.labels.push_back(label(rng));
  }
  return b;
}

/// Least squares through the 2x2 normal equations [n Sx; Sx Sxx] [c; m] = [Sy; Sxy].
struct NormalFit {
  double slope;
  double intercept;
  double rss;
};

inline NormalFit normal_equations(std::span<const std::pair<double, double>> pts) {
  Eigen::MatrixXd A(static_cast<Eigen::Index>(pts.size()), 2);
  Eigen::VectorXd y(static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    A(static_cast<Eigen::Index>(i), 0) = 1.0;
    A(static_cast<Eigen::Index>(i), 1) = pts[i].first;
    y[static_cast<Eigen::Index>(i)] = pts[i].second;
  }
  const Eigen::Vector2d coef = (A.transpose() * A).ldlt().solve(A.transpose() * y);
  const double rss = (A * coef - y).squaredNorm();
  return {coef[1], coef[0], rss};
}

/// Linear scan for the largest feasible b.
inline std::optional<std::int64_t> max_batch_scan(const fedbatch::MemoryModel& mm, double budget,
                                                  std::int64_t b_upper) {
  std::optional<std::int64_t> best;
  for (std::int64_t b = 1; b <= b_upper; ++b) {
    if (fedbatch::total_memory(mm, b) <= budget) best = b;
  }
  return best;
}

/// Direct evaluation of epoch time: sum over steps of t_c + t_mov (+ t_sync).
inline double epoch_seconds(const fedbatch::CostModel& cm, std::int64_t D, std::int64_t B) {
  const std::int64_t steps = (D + B - 1) / B;
  double total = 0.0;
  for (std::int64_t i = 0; i < steps; ++i) {
    total += cm.fit_tc.predict(static_cast<double>(B)) + cm.fit_tmov.predict(static_cast<double>(B));
    if ((i + 1) % cm.H == 0) total += cm.t_sync;
  }
  return total;
}

/// Exhaustive argmin; ties within relative 1e-12 keep the smaller batch.
inline std::optional<std::int64_t> optimal_batch_scan(const fedbatch::CostModel& cm,
                                                      const fedbatch::MemoryModel& mm,
                                                      std::int64_t D, double budget,
                                                      std::vector<std::int64_t> candidates) {
  std::sort(candidates.begin(), candidates.end());
  std::optional<std::int64_t> best;
  double best_t = std::numeric_limits<double>::infinity();
  for (std::int64_t b : candidates) {
    if (b < 1 || b > D || fedbatch::total_memory(mm, b) > budget) continue;
    const double t = epoch_seconds(cm, D, b);
    if (!best || t < best_t - 1e-12 * std::abs(best_t)) {
      best = b;
      best_t = t;
    }
  }
  return best;
}

/// 2-norm summed in index order, matching best_k_sparse_residual exactly.
inline double ordered_norm(const Eigen::VectorXd& v) {
  double sq = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) sq += v[i] * v[i];
  return std::sqrt(sq);
}

/// Smallest residual norm over every k-subset of coordinates.
inline double best_k_sparse_residual(const Eigen::VectorXd& g, std::size_t k) {
  const auto n = static_cast<std::size_t>(g.size());
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
    double r = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(mask & (1u << i))) r += g[static_cast<Eigen::Index>(i)] * g[static_cast<Eigen::Index>(i)];
    }
    best = std::min(best, std::sqrt(r));
  }
  return best;
}

}  // namespace oracle
