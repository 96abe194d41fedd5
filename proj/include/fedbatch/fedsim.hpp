#pragma once

// Federated execution engine: local SGD rounds, parameter averaging
// (FedAvg), gradient averaging (BSP), weighted aggregation and per-iteration
// metrics.

#include <fedbatch/compress.hpp>
#include <fedbatch/datagen.hpp>
#include <fedbatch/gradmod.hpp>
#include <fedbatch/nncore.hpp>
#include <fedbatch/perfmodel.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedbatch {

/// What clients send at an aggregation: their parameters (FedAvg) or their
/// per-step gradients (BSP; requires H == 1).
enum class Payload { parameters, gradients };

/// Whether the gradient-change metric is evaluated per client or on the
/// aggregated gradient (gradient payload only).
enum class DeltaSource { per_client, aggregated };

struct SyncPolicy {
  int H = 1;
  Payload payload = Payload::parameters;
  bool weighted = false;  // weight clients by shard sample count
  std::string tag = "fedavg";

  static SyncPolicy bsp() { return {1, Payload::gradients, false, "bsp"}; }
  static SyncPolicy fedavg(int H) { return {H, Payload::parameters, false, "fedavg"}; }

  void validate() const;
};

struct TrainConfig {
  double lr = 0.05;
  int local_batch = 8;
  int total_iterations = 100;
  int eval_every = 10;
  std::uint64_t seed = 0;
  std::optional<StepPolicy> step_policy;
  std::optional<CompressionSpec> compression;
  DeltaSource delta_source = DeltaSource::per_client;
  std::optional<CostModel> cost_model;  // drives the logical clock

  void validate() const;
};

struct IterationRecord {
  int iter = 0;
  double loss = 0.0;          // mean minibatch loss over clients
  double test_acc = 0.0;      // NaN when not evaluated at this iteration
  double grad_norm_sq = 0.0;  // |G|^2 (client mean, or aggregated gradient)
  double delta = 0.0;         // gradient-change metric; NaN without predecessor
  double scale_factor = 1.0;  // applied step-function factor (client mean)
  std::size_t bytes_comm = 0;
};

struct RunSummary {
  std::string tag;
  std::uint64_t seed = 0;
  int iterations = 0;
  int H = 1;
  int num_clients = 0;
  int global_batch = 0;  // B = sum of client batch sizes per aggregation
  double final_test_acc = 0.0;
  double final_loss = 0.0;
  std::size_t total_bytes_comm = 0;
  double simulated_time = 0.0;
  std::map<double, std::size_t> factor_histogram;
  std::vector<std::string> notes;
};

struct MetricsLog {
  std::vector<IterationRecord> records;
  RunSummary summary;

  std::vector<double> scale_factors() const;
  std::vector<double> grad_norms_sq() const;
};

struct ClientUpdate {
  int client_id = 0;
  ParamVector values;
};

/// (1/C) sum_c w_c, summed in ascending client id.
ParamVector aggregate_average(std::span<const ClientUpdate> updates);
/// Same, with the position in the span as the client id.
ParamVector aggregate_average(std::span<const ParamVector> client_params);

/// sum_c weight_c * w_c / sum_c weight_c, summed in ascending client id.
ParamVector weighted_aggregate(std::span<const ClientUpdate> updates, std::span<const double> weights);
ParamVector weighted_aggregate(std::span<const ParamVector> client_params,
                               std::span<const double> weights);

/// Without-replacement minibatches from one shard, reshuffled every local epoch.
class ShardSampler {
 public:
  ShardSampler(const ClientShard& shard, std::uint64_t seed);

  /// Next `b` dataset rows; starts a new epoch when fewer than b remain.
  std::vector<std::size_t> next(std::size_t b);
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle();

  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::uint64_t seed_;
};

/// Per-client mutable state for one run.
struct ClientState {
  ClientState(const ClientShard& shard, const TrainConfig& cfg);

  int client_id;
  std::size_t shard_size;
  ShardSampler sampler;
  NormTracker tracker;                  // used when no step policy is configured
  std::unique_ptr<StepMapper> mapper;   // step-function scaler, if configured
  GradientVector residual;              // compression error feedback
  Workspace<double> ws;
};

struct LocalStep {
  double loss = 0.0;
  double grad_norm_sq = 0.0;
  double delta = 0.0;
  double factor = 1.0;
};

struct LocalRound {
  ParamVector params;
  std::vector<LocalStep> steps;
};

/// h successive SGD steps on the client's own minibatch stream.
LocalRound local_round(const ModelSpec& spec, const Dataset& train, ParamVector params,
                       ClientState& client, const TrainConfig& cfg, int h);

/// Called with the global parameters after every iteration.
using StepObserver = std::function<void(int iter, const ParamVector& global)>;

struct FederatedResult {
  MetricsLog log;
  ParamVector final_params;
};

/// Runs cfg.total_iterations global iterations. Every client takes one local
/// step per iteration; aggregation fires after iterations with
/// (i + 1) mod H == 0 (and once more after the last iteration if it is not a
/// sync step).
FederatedResult run_federated(const ModelSpec& spec, const Dataset& train,
                              std::span<const ClientShard> shards, const Dataset& test,
                              const SyncPolicy& sync, const TrainConfig& cfg,
                              std::optional<ParamVector> initial = std::nullopt,
                              const StepObserver& observer = {});

/// Local steps in one epoch of the largest shard: floor(max shard size / b).
int epoch_sync_period(std::span<const ClientShard> shards, int local_batch);

}  // namespace fedbatch
