#include <fedbatch/cli/commands.hpp>

#include <fedbatch/metrics_io.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace fedbatch::cli {

unsigned worker_count(std::size_t jobs) {
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FEDBATCH_WORKERS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) workers = static_cast<unsigned>(cap);
  }
  return static_cast<unsigned>(std::clamp<std::size_t>(jobs, 1, workers));
}

namespace {

struct Job {
  std::size_t run = 0;
  std::size_t seed_index = 0;
};

struct JobResult {
  RunSummary summary;
};

JobResult run_job(const ExperimentConfig& cfg, const RunConfig& run, std::uint64_t seed) {
  auto result = run_seed(cfg, run, seed);

  const auto dir = cfg.output_dir / run.name / ("seed_" + std::to_string(seed));
  std::ostringstream metrics;
  write_metrics_csv(metrics, result.log);
  write_file(dir / "metrics.csv", metrics.str());
  std::ostringstream factors;
  write_factor_csv(factors, result.log.summary.factor_histogram);
  write_file(dir / "factors.csv", factors.str());
  write_file(dir / "summary.json", summary_json(result.log.summary).dump(2) + "\n");
  return {std::move(result.log.summary)};
}

}  // namespace

FederatedResult run_seed(const ExperimentConfig& cfg, const RunConfig& run, std::uint64_t seed) {
  const SeededData data = build_data(cfg.data, seed);
  const ModelSpec spec = cfg.model.spec(static_cast<int>(data.train.dim()), data.train.num_classes);

  PartitionSpec part = cfg.partition;
  part.seed = derive_seed(seed, 2);
  const auto shards = partition(data.train, part);

  SyncPolicy sync;
  sync.H = run.sync.H ? *run.sync.H : epoch_sync_period(shards, run.train.local_batch);
  sync.payload = run.sync.payload;
  sync.weighted = run.sync.weighted;
  sync.tag = run.name;

  TrainConfig train = run.train;
  train.seed = seed;
  auto result = run_federated(spec, data.train, shards, data.test, sync, train);
  if (!run.sync.H) {
    result.log.summary.notes.push_back("H = " + std::to_string(sync.H) +
                                       " local steps: one epoch of the largest shard");
  }
  return result;
}

TrainOutcome run_experiment(const ExperimentConfig& cfg) {
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < cfg.runs.size(); ++r) {
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) jobs.push_back({r, s});
  }
  std::vector<std::optional<JobResult>> results(jobs.size());
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      try {
        results[k] = run_job(cfg, cfg.runs[jobs[k].run], cfg.seeds[jobs[k].seed_index]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned workers = worker_count(jobs.size());
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  // Merge in (run, seed) order so the summary does not depend on scheduling.
  nlohmann::json merged;
  merged["name"] = cfg.name;
  merged["seeds"] = cfg.seeds;
  nlohmann::json runs = nlohmann::json::object();
  for (std::size_t r = 0; r < cfg.runs.size(); ++r) {
    std::vector<double> acc;
    std::vector<int> periods;
    std::vector<std::size_t> bytes;
    std::map<double, std::size_t> hist;
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
      const RunSummary& sum = results[r * cfg.seeds.size() + s]->summary;
      acc.push_back(sum.final_test_acc);
      periods.push_back(sum.H);
      bytes.push_back(sum.total_bytes_comm);
      for (const auto& [f, c] : sum.factor_histogram) hist[f] += c;
    }
    const double mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
    nlohmann::json hist_json = nlohmann::json::array();
    for (const auto& [f, c] : hist) hist_json.push_back({{"factor", f}, {"count", c}});
    const auto& name = cfg.runs[r].name;
    runs[name] = {{"H", periods},
                  {"final_test_acc", acc},
                  {"mean_final_test_acc", mean},
                  {"total_bytes_comm", bytes},
                  {"factor_histogram", hist_json}};
    merged[name + "_acc"] = acc;
  }
  merged["runs"] = runs;
  write_file(cfg.output_dir / "summary.json", merged.dump(2) + "\n");
  return {merged};
}

std::vector<PerfSample> run_profile(const ModelFile& model, const ProfileOptions& opts) {
  const SeededData data = build_data(model.data, opts.seed);
  const ModelSpec spec = model.model.spec(static_cast<int>(data.train.dim()), data.train.num_classes);
  const ParamVector params = init_params(spec, derive_seed(opts.seed, 3));
  return profile(spec, params, data.train, opts.batches, opts.reps, derive_seed(opts.seed, 4));
}

Plan run_plan(const std::vector<PerfSample>& samples, const ModelSpec& spec, const PlanOptions& opts) {
  if (samples.size() < 2) throw std::invalid_argument("plan: need at least two profile rows");
  if (opts.dataset_size < 1) throw std::invalid_argument("plan: dataset size must be positive");
  const CostFits fits = fit_profile(samples);
  CostModel cm{fits.tc, fits.tmov, opts.t_sync, opts.sync_period};
  const MemoryModel mm = memory_model_for(spec, opts.optimizer_multiplier, fits.mbatch);
  std::vector<std::int64_t> candidates = opts.candidates;
  if (candidates.empty()) {
    // Powers of two from the smallest profiled size up to D: the default grid
    // never extrapolates the fits below the measured range.
    const int smallest = std::ranges::min(samples, {}, &PerfSample::batch_size).batch_size;
    std::int64_t b = 1;
    while (b < smallest) b *= 2;
    for (; b <= opts.dataset_size; b *= 2) candidates.push_back(b);
    if (candidates.empty()) candidates.push_back(opts.dataset_size);
  }
  return make_plan(cm, mm, opts.dataset_size, opts.budget, candidates);
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("list", "'" + item + "' is not an integer");
    }
    if (used != item.size() || v <= 0) throw ConfigError("list", "'" + item + "' is not a positive integer");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("list", "empty list");
  return out;
}

namespace {

ParamVector early_training_params(const ModelSpec& spec, const Dataset& train, std::uint64_t seed,
                                  int warm_steps, double lr) {
  ParamVector params = init_params(spec, derive_seed(seed, 3));
  if (warm_steps <= 0) return params;
  ClientShard all;
  all.indices.resize(static_cast<std::size_t>(train.size()));
  std::iota(all.indices.begin(), all.indices.end(), std::size_t{0});
  ShardSampler sampler(all, derive_seed(seed, 5));
  const auto b = std::min<std::size_t>(32, all.size());
  Workspace<double> ws;
  for (int k = 0; k < warm_steps; ++k) {
    const auto rows = sampler.next(b);
    params = sgd_step(params, backward(spec, params, gather_batch(train, rows), ws).grad, lr);
  }
  return params;
}

}  // namespace

int main_entry(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"fedbatch: federated batch-size simulator and planner"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  auto* train = app.add_subcommand("train", "run an experiment config across its seed list");
  train->add_option("config", config_path, "experiment YAML")->required();
  train->add_option("--out-dir", out_dir, "override output_dir from the config");

  std::string model_path;
  std::string batches = "8,32,128,512";
  int reps = 5;
  std::uint64_t seed = 0;
  std::string out_path;
  auto* prof = app.add_subcommand("profile", "time backward and batch assembly per batch size");
  prof->add_option("model", model_path, "model YAML (data + model sections)")->required();
  prof->add_option("--batches", batches, "comma-separated batch sizes");
  prof->add_option("--reps", reps, "repetitions per batch size (>= 3)");
  prof->add_option("--seed", seed);
  prof->add_option("--out", out_path, "profile CSV")->default_val("profile.csv");

  std::string profile_path;
  PlanOptions plan_opts;
  std::string candidates;
  auto* plan = app.add_subcommand("plan", "memory-feasible batch size minimizing epoch time");
  plan->add_option("profile", profile_path, "profile CSV")->required();
  plan->add_option("model", model_path, "model YAML")->required();
  plan->add_option("--budget", plan_opts.budget, "memory budget in bytes")->required();
  plan->add_option("--dataset-size", plan_opts.dataset_size, "samples per epoch (D)")->required();
  plan->add_option("--t-sync", plan_opts.t_sync, "seconds per aggregation");
  plan->add_option("--sync-period", plan_opts.sync_period, "H");
  plan->add_option("--optimizer-multiplier", plan_opts.optimizer_multiplier, "0 SGD, 1 momentum, 2 Adam");
  plan->add_option("--candidates", candidates, "comma-separated batch sizes");
  plan->add_option("--out", out_path, "plan JSON")->default_val("plan.json");

  double ratio = 0.1;
  int trials = 20;
  int warm_steps = 0;
  double lr = 0.05;
  auto* sweep = app.add_subcommand("sweep-compression", "top-k residual versus batch size");
  sweep->add_option("model", model_path, "model YAML")->required();
  sweep->add_option("--batches", batches, "comma-separated batch sizes");
  sweep->add_option("--ratio", ratio, "fraction of coordinates kept");
  sweep->add_option("--trials", trials);
  sweep->add_option("--seed", seed);
  sweep->add_option("--warmup-steps", warm_steps, "SGD steps before measuring");
  sweep->add_option("--lr", lr, "learning rate of the warm-up steps");
  sweep->add_option("--out", out_path, "sweep CSV")->default_val("compression_sweep.csv");

  std::string b_small = "8,32,128";
  int b_large = 512;
  auto* noise = app.add_subcommand("estimate-noise", "small/large batch gradient difference norms");
  noise->add_option("model", model_path, "model YAML")->required();
  noise->add_option("--b-small", b_small, "comma-separated small batch sizes");
  noise->add_option("--b-large", b_large);
  noise->add_option("--trials", trials);
  noise->add_option("--seed", seed);
  noise->add_option("--warmup-steps", warm_steps, "SGD steps before measuring");
  noise->add_option("--lr", lr, "learning rate of the warm-up steps");
  noise->add_option("--out", out_path, "noise CSV")->default_val("noise.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kConfigError;
  }

  try {
    if (train->parsed()) {
      ExperimentConfig cfg = load_experiment(config_path);
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      const auto outcome = run_experiment(cfg);
      for (const auto& run : cfg.runs) {
        out << run.name << " mean final test accuracy: "
            << outcome.summary["runs"][run.name]["mean_final_test_acc"].get<double>() << '\n';
      }
      out << "wrote " << (cfg.output_dir / "summary.json").string() << '\n';
      return kSuccess;
    }

    if (prof->parsed()) {
      const ModelFile model = load_model_file(model_path);
      ProfileOptions opts{parse_int_list(batches), reps, seed};
      const auto samples = run_profile(model, opts);
      std::ostringstream csv;
      write_profile_csv(csv, samples);
      write_file(out_path, csv.str());
      out << "wrote " << samples.size() << " rows to " << out_path << '\n';
      return kSuccess;
    }

    if (plan->parsed()) {
      const ModelFile model = load_model_file(model_path);
      if (!candidates.empty()) {
        for (int b : parse_int_list(candidates)) plan_opts.candidates.push_back(b);
      }
      const SeededData data = build_data(model.data, 0);
      const ModelSpec spec = model.model.spec(static_cast<int>(data.train.dim()), data.train.num_classes);
      const Plan p = run_plan(read_profile_csv(profile_path), spec, plan_opts);
      write_file(out_path, plan_json(p).dump(2) + "\n");
      if (!p.b_opt) {
        err << "no candidate batch size fits the memory budget\n";
        return kInfeasiblePlan;
      }
      out << "b_max " << *p.b_max << ", b_opt " << *p.b_opt << "; wrote " << out_path << '\n';
      return kSuccess;
    }

    if (sweep->parsed() || noise->parsed()) {
      const ModelFile model = load_model_file(model_path);
      const SeededData data = build_data(model.data, seed);
      const ModelSpec spec = model.model.spec(static_cast<int>(data.train.dim()), data.train.num_classes);
      const ParamVector params = early_training_params(spec, data.train, seed, warm_steps, lr);
      std::ostringstream csv;
      if (sweep->parsed()) {
        const auto sizes = parse_int_list(batches);
        write_sweep_csv(csv, compression_noise_sweep(spec, params, data.train, sizes, ratio, trials,
                                                     derive_seed(seed, 6)));
      } else {
        std::vector<NoiseEstimate> rows;
        for (int b : parse_int_list(b_small)) {
          rows.push_back(estimate_gamma(spec, params, data.train, b, b_large, trials, derive_seed(seed, 7)));
        }
        write_noise_csv(csv, rows);
      }
      write_file(out_path, csv.str());
      out << "wrote " << out_path << '\n';
      return kSuccess;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kRuntimeFailure;
}

}  // namespace fedbatch::cli
