#pragma once

// Seeded synthetic datasets and client partitioning (IID and label skew).

#include <fedbatch/nncore.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fedbatch {

struct Dataset {
  Matrix<double> features;  // n x d
  std::vector<int> labels;
  int num_classes = 0;
  std::string name;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  /// Throws std::invalid_argument if a class is empty or a label is out of range.
  void validate() const;
};

enum class PartitionMode { iid, label_skew };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::iid;
  int num_clients = 1;
  int labels_per_client = 1;
  std::uint64_t seed = 0;
};

struct ClientShard {
  int client_id = 0;
  std::vector<std::size_t> indices;  // rows of the parent dataset

  std::size_t size() const { return indices.size(); }
};

/// Gaussian blobs: class k sits at a seeded random direction scaled to norm
/// 2.0, with isotropic noise of standard deviation `spread`. Rows are grouped
/// by class.
Dataset make_synthetic(int num_classes, int dim, int per_class, double spread,
                       std::uint64_t seed);

/// Stratified seeded split; every class keeps at least one sample on each side.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double train_fraction,
                                             std::uint64_t seed);

std::vector<ClientShard> partition_iid(const Dataset& ds, int num_clients, std::uint64_t seed);

std::vector<ClientShard> partition_label_skew(const Dataset& ds, int num_clients,
                                              int labels_per_client, std::uint64_t seed);

std::vector<ClientShard> partition(const Dataset& ds, const PartitionSpec& spec);

/// Label lists handed to each client by the label-skew partitioner.
std::vector<std::vector<int>> assign_labels(int num_classes, int num_clients,
                                            int labels_per_client, std::uint64_t seed);

Batch gather_batch(const Dataset& ds, std::span<const std::size_t> rows);

/// Reads a CSV with header f0,...,f{d-1},label. Throws std::runtime_error on
/// malformed headers or non-numeric cells.
Dataset load_csv_dataset(const std::filesystem::path& path);

/// Sorted indices of `count` rows drawn without replacement.
std::vector<std::size_t> sample_rows(std::size_t n, std::size_t count, std::uint64_t seed);

}  // namespace fedbatch
