#include <fedbatch/compress.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedbatch {

std::size_t CompressionSpec::kept(std::size_t length) const {
  if (kind == CompressionKind::none) return length;
  // The epsilon keeps e.g. 0.29 * 100 from flooring to 28.
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(length) + 1e-9));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(length, 1));
}

void CompressionSpec::validate() const {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("compression ratio must lie in (0, 1]");
}

SparseUpdate topk_compress(const GradientVector& grad, const CompressionSpec& spec) {
  spec.validate();
  const auto n = static_cast<std::size_t>(grad.size());
  if (n == 0) throw std::invalid_argument("topk_compress: empty gradient");
  const std::size_t k = spec.kind == CompressionKind::none ? n : spec.kept(n);

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  auto larger = [&grad](std::uint32_t a, std::uint32_t b) {
    const double ma = std::abs(grad(a));
    const double mb = std::abs(grad(b));
    return ma != mb ? ma > mb : a < b;
  };
  if (k < n) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), larger);
    order.resize(k);
  }
  std::sort(order.begin(), order.end());

  SparseUpdate out;
  out.original_length = n;
  out.indices = std::move(order);
  out.values.reserve(k);
  for (std::uint32_t i : out.indices) out.values.push_back(grad(i));
  return out;
}

GradientVector densify(const SparseUpdate& sparse) {
  GradientVector dense = GradientVector::Zero(static_cast<Eigen::Index>(sparse.original_length));
  for (std::size_t k = 0; k < sparse.nnz(); ++k) dense(sparse.indices[k]) = sparse.values[k];
  return dense;
}

GradientVector decompose(const GradientVector& grad, const SparseUpdate& sparse) {
  if (static_cast<std::size_t>(grad.size()) != sparse.original_length) {
    throw std::invalid_argument("decompose: gradient and sparse update lengths differ");
  }
  return grad - densify(sparse);
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty sample");
  const auto mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

std::vector<CompressionSweepRow> compression_noise_sweep(const ModelSpec& spec,
                                                         const ParamVector& params,
                                                         const Dataset& ds,
                                                         std::span<const int> batch_sizes,
                                                         double ratio, int trials,
                                                         std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("compression sweep: trials must be >= 1");
  const CompressionSpec cs{CompressionKind::topk, ratio, false};
  cs.validate();
  const auto n = static_cast<std::size_t>(ds.size());

  std::vector<CompressionSweepRow> rows;
  Workspace<double> ws;
  for (std::size_t j = 0; j < batch_sizes.size(); ++j) {
    const int b = batch_sizes[j];
    if (b <= 0 || static_cast<std::size_t>(b) > n) {
      throw std::invalid_argument("compression sweep: batch size " + std::to_string(b) + " out of range");
    }
    CompressionSweepRow row;
    row.batch_size = b;
    row.ratio = ratio;
    for (int t = 0; t < trials; ++t) {
      const auto picked = sample_rows(n, static_cast<std::size_t>(b),
                                      derive_seed(seed, static_cast<std::uint64_t>(j) * 100003u + t));
      const GradientVector g = backward(spec, params, gather_batch(ds, picked), ws).grad;
      const double g_norm = g.norm();
      const GradientVector phi = decompose(g, topk_compress(g, cs));
      row.samples.push_back(g_norm == 0.0 ? 0.0 : phi.norm() / g_norm);
    }
    row.rel_residual_mean = std::accumulate(row.samples.begin(), row.samples.end(), 0.0) /
                            static_cast<double>(trials);
    row.rel_residual_p50 = median(row.samples);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace fedbatch
