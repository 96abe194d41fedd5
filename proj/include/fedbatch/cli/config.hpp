#pragma once

// Experiment configuration files (YAML). Every section is validated against
// a fixed key set before anything runs; unknown keys are rejected.

#include <fedbatch/compress.hpp>
#include <fedbatch/datagen.hpp>
#include <fedbatch/fedsim.hpp>
#include <fedbatch/gradmod.hpp>
#include <fedbatch/nncore.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace YAML {
class Node;
}

namespace fedbatch::cli {

/// Invalid or incomplete configuration; `path` names the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::runtime_error(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct DataConfig {
  int num_classes = 10;
  int dim = 16;
  int per_class = 100;
  double spread = 0.5;
  double train_fraction = 0.8;
  std::optional<std::filesystem::path> csv;  // replaces the synthetic generator
};

struct ModelConfig {
  std::vector<int> hidden;
  Activation activation = Activation::relu;
  int bytes_per_element = 8;

  ModelSpec spec(int input_dim, int num_classes) const;
};

/// `H: epoch` resolves to epoch_sync_period() of the actual shards.
struct SyncConfig {
  std::optional<int> H;  // nullopt means one local epoch
  Payload payload = Payload::parameters;
  bool weighted = false;
};

struct RunConfig {
  std::string name;
  SyncConfig sync;
  TrainConfig train;  // seed is filled in per seed
};

struct ExperimentConfig {
  std::string name;
  std::filesystem::path output_dir;
  std::vector<std::uint64_t> seeds;
  DataConfig data;
  ModelConfig model;
  PartitionSpec partition;  // seed is filled in per seed
  std::vector<RunConfig> runs;
};

/// Model + data description used by profile / plan / sweep / noise commands.
struct ModelFile {
  std::string name;
  DataConfig data;
  ModelConfig model;
};

ExperimentConfig parse_experiment(const YAML::Node& root);
ExperimentConfig load_experiment(const std::filesystem::path& path);

ModelFile parse_model_file(const YAML::Node& root);
ModelFile load_model_file(const std::filesystem::path& path);

/// Synthetic (or CSV-backed) dataset for a given seed, split into train/test.
struct SeededData {
  Dataset train;
  Dataset test;
};
SeededData build_data(const DataConfig& data, std::uint64_t seed);

}  // namespace fedbatch::cli
