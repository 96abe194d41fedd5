#pragma once

// Top-k gradient sparsification and the sparse/dense-residual split
//   G = densify(C(G)) + phi.

#include <fedbatch/datagen.hpp>

#include <cstdint>
#include <vector>

namespace fedbatch {

enum class CompressionKind { none, topk };

struct CompressionSpec {
  CompressionKind kind = CompressionKind::none;
  double ratio = 1.0;  // fraction of coordinates kept, in (0, 1]
  bool accumulate_residual = false;

  /// max(1, floor(ratio * length)).
  std::size_t kept(std::size_t length) const;
  void validate() const;
};

struct SparseUpdate {
  std::vector<std::uint32_t> indices;  // strictly increasing
  std::vector<double> values;
  std::size_t original_length = 0;

  std::size_t nnz() const { return indices.size(); }
};

/// Wire cost: 4-byte index + 8-byte value per retained coordinate.
inline constexpr std::size_t kIndexBytes = 4;
inline constexpr std::size_t kValueBytes = 8;

inline std::size_t wire_bytes(const SparseUpdate& s) { return s.nnz() * (kIndexBytes + kValueBytes); }
inline std::size_t dense_wire_bytes(std::size_t length) { return length * kValueBytes; }

/// Keeps the k largest-magnitude coordinates; ties go to the lower index.
SparseUpdate topk_compress(const GradientVector& grad, const CompressionSpec& spec);

GradientVector densify(const SparseUpdate& sparse);

/// phi = grad - densify(sparse).
GradientVector decompose(const GradientVector& grad, const SparseUpdate& sparse);

struct CompressionSweepRow {
  int batch_size = 0;
  double ratio = 1.0;
  double rel_residual_mean = 0.0;
  double rel_residual_p50 = 0.0;
  std::vector<double> samples;
};

/// For each batch size, ||phi(b)|| / ||G(b)|| over `trials` seeded draws.
std::vector<CompressionSweepRow> compression_noise_sweep(const ModelSpec& spec,
                                                         const ParamVector& params,
                                                         const Dataset& ds,
                                                         std::span<const int> batch_sizes,
                                                         double ratio, int trials,
                                                         std::uint64_t seed);

double median(std::vector<double> values);

}  // namespace fedbatch
