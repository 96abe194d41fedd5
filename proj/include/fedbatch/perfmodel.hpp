#pragma once

// Parallel performance model: per-step cost t_c + t_mov (+ t_sync at
// aggregation steps), the five-term training memory decomposition, linear
// fits over profiled batch sizes, and the batch-size planner built on them.

#include <fedbatch/datagen.hpp>
#include <fedbatch/nncore.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace fedbatch {

struct PerfSample {
  int batch_size = 1;
  double t_c = 0.0;      // seconds, median backward time
  double t_mov = 0.0;    // seconds, median batch assembly time
  double m_batch = 0.0;  // bytes held by one assembled batch
  int reps = 0;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double rss = 0.0;
  std::size_t samples = 0;

  double predict_raw(double x) const { return slope * x + intercept; }
  /// Clamped at zero; a fitted line may dip below zero outside the sampled range.
  double predict(double x) const { return std::max(0.0, predict_raw(x)); }
  bool clamps_at(double x) const { return predict_raw(x) < 0.0; }
};

/// Ordinary least squares. Throws if fewer than two distinct x values.
LinearFit fit_linear(std::span<const std::pair<double, double>> points);

struct CostModel {
  LinearFit fit_tc;
  LinearFit fit_tmov;
  double t_sync = 0.0;
  int H = 1;
};

struct MemoryModel {
  std::size_t param_count = 0;
  int bytes_per_element = 4;
  int optimizer_multiplier = 0;  // 0 plain SGD, 1 momentum, 2 Adam-style
  double per_sample_activation_bytes = 0.0;
  LinearFit fit_mbatch;

  double model_bytes() const { return static_cast<double>(param_count) * bytes_per_element; }
  /// M_model + M_grad + M_opt.
  double fixed_bytes() const { return (2.0 + optimizer_multiplier) * model_bytes(); }
};

/// (sum of hidden + output widths) * bytes_per_element.
double activation_bytes_per_sample(const ModelSpec& spec);

/// activation_bytes_per_sample(spec) * b.
double activation_memory(const ModelSpec& spec, std::int64_t b);

MemoryModel memory_model_for(const ModelSpec& spec, int optimizer_multiplier, LinearFit fit_mbatch);

/// M_model + M_grad + M_opt + M_act(b) + M_batch(b).
double total_memory(const MemoryModel& mm, std::int64_t b);

inline constexpr std::int64_t kMaxBatchUpper = std::int64_t{1} << 30;

/// Largest b in [1, b_upper] with total_memory(b) <= budget; nullopt when
/// even b = 1 does not fit.
std::optional<std::int64_t> max_batch(const MemoryModel& mm, double budget,
                                      std::int64_t b_upper = kMaxBatchUpper);

/// True when step i ends an aggregation period, i.e. (i + 1) mod H == 0.
inline bool is_sync_step(std::int64_t i, int H) { return (i + 1) % H == 0; }

double step_time(const CostModel& cm, std::int64_t b, std::int64_t i);

struct EpochTime {
  std::int64_t iterations = 0;
  double seconds = 0.0;
};

/// I = ceil(D / B) and the summed step times of one epoch.
EpochTime epoch_time(const CostModel& cm, std::int64_t D, std::int64_t B);

struct PlanRow {
  std::int64_t batch_size = 0;
  bool feasible = false;
  double total_memory = 0.0;
  EpochTime epoch;
};

struct Plan {
  std::optional<std::int64_t> b_max;
  std::optional<std::int64_t> b_opt;
  std::vector<PlanRow> table;
  bool clamped = false;  // some prediction hit the zero clamp
};

/// Argmin of epoch time over memory-feasible candidates (B <= D), ties
/// (relative 1e-12) broken toward the smaller batch.
std::optional<std::int64_t> optimal_batch(const CostModel& cm, const MemoryModel& mm,
                                          std::int64_t D, double budget,
                                          std::span<const std::int64_t> candidates);

Plan make_plan(const CostModel& cm, const MemoryModel& mm, std::int64_t D, double budget,
               std::span<const std::int64_t> candidates);

/// Times backward (t_c) and batch assembly (t_mov) `reps` times per batch
/// size on a single thread and reports medians; m_batch is the measured heap
/// growth of one assembled batch.
std::vector<PerfSample> profile(const ModelSpec& spec, const ParamVector& params,
                                const Dataset& ds, std::span<const int> batches, int reps,
                                std::uint64_t seed);

struct CostFits {
  LinearFit tc;
  LinearFit tmov;
  LinearFit mbatch;
};

CostFits fit_profile(std::span<const PerfSample> samples);

struct MemoryFootprint {
  double measured = 0.0;   // heap bytes live after one training step
  double accounted = 0.0;  // sum of the trainer's buffer sizes
};

/// Allocates the state of one plain-SGD training step (parameters,
/// gradient, optimizer slots, batch, activation workspace), runs it and
/// reports the live heap growth.
MemoryFootprint measure_training_memory(const ModelSpec& spec, const Dataset& ds, int b,
                                        int optimizer_multiplier, std::uint64_t seed);

}  // namespace fedbatch
