#pragma once

#include <fedbatch/cli/config.hpp>
#include <fedbatch/perfmodel.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fedbatch::cli {

enum ExitCode : int {
  kSuccess = 0,
  kRuntimeFailure = 1,
  kConfigError = 2,
  kInfeasiblePlan = 3,
};

/// Worker cap for seed fan-out; FEDBATCH_WORKERS overrides the hardware count.
unsigned worker_count(std::size_t jobs);

/// One (run, seed) pair of an experiment: builds the seeded data and shards,
/// resolves `H: epoch`, and trains. Nothing is written to disk.
FederatedResult run_seed(const ExperimentConfig& cfg, const RunConfig& run, std::uint64_t seed);

struct TrainOutcome {
  nlohmann::json summary;  // merged across seeds, also written to summary.json
};

/// Runs every (run, seed) pair of the experiment and writes
///   <out>/<run>/seed_<s>/{metrics.csv, summary.json, factors.csv}
///   <out>/summary.json
TrainOutcome run_experiment(const ExperimentConfig& cfg);

struct ProfileOptions {
  std::vector<int> batches{8, 32, 128, 512};
  int reps = 5;
  std::uint64_t seed = 0;
};

std::vector<PerfSample> run_profile(const ModelFile& model, const ProfileOptions& opts);

struct PlanOptions {
  double budget = 0.0;           // bytes
  std::int64_t dataset_size = 0; // D
  double t_sync = 0.0;
  int sync_period = 1;
  int optimizer_multiplier = 0;
  std::vector<std::int64_t> candidates;  // empty: powers of two up to D
};

Plan run_plan(const std::vector<PerfSample>& profile, const ModelSpec& spec, const PlanOptions& opts);

/// Parses "8,32,128" style lists.
std::vector<int> parse_int_list(const std::string& text);

/// Full command-line entry point; returns the process exit code.
int main_entry(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace fedbatch::cli
