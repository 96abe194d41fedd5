#include <fedbatch/perfmodel.hpp>

#include <fedbatch/compress.hpp>
#include <fedbatch/heap_probe.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace fedbatch {

LinearFit fit_linear(std::span<const std::pair<double, double>> points) {
  if (points.size() < 2) throw std::invalid_argument("fit_linear: need at least two points");
  const auto n = static_cast<double>(points.size());
  double x_mean = 0.0;
  double y_mean = 0.0;
  for (const auto& [x, y] : points) {
    x_mean += x;
    y_mean += y;
  }
  x_mean /= n;
  y_mean /= n;

  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - x_mean) * (x - x_mean);
    sxy += (x - x_mean) * (y - y_mean);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_linear: all x values are equal");

  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = y_mean - fit.slope * x_mean;
  fit.samples = points.size();
  for (const auto& [x, y] : points) {
    const double r = y - fit.predict_raw(x);
    fit.rss += r * r;
  }
  return fit;
}

double activation_bytes_per_sample(const ModelSpec& spec) {
  double widths = 0.0;
  for (std::size_t l = 1; l < spec.layer_widths.size(); ++l) widths += spec.layer_widths[l];
  return widths * spec.bytes_per_element;
}

double activation_memory(const ModelSpec& spec, std::int64_t b) {
  if (b < 0) throw std::invalid_argument("activation_memory: negative batch size");
  return activation_bytes_per_sample(spec) * static_cast<double>(b);
}

MemoryModel memory_model_for(const ModelSpec& spec, int optimizer_multiplier, LinearFit fit_mbatch) {
  if (optimizer_multiplier < 0) throw std::invalid_argument("optimizer multiplier must be >= 0");
  MemoryModel mm;
  mm.param_count = spec.param_count();
  mm.bytes_per_element = spec.bytes_per_element;
  mm.optimizer_multiplier = optimizer_multiplier;
  mm.per_sample_activation_bytes = activation_bytes_per_sample(spec);
  mm.fit_mbatch = fit_mbatch;
  return mm;
}

double total_memory(const MemoryModel& mm, std::int64_t b) {
  const auto batch = static_cast<double>(b);
  return mm.fixed_bytes() + mm.per_sample_activation_bytes * batch + mm.fit_mbatch.predict(batch);
}

std::optional<std::int64_t> max_batch(const MemoryModel& mm, double budget, std::int64_t b_upper) {
  if (b_upper < 1) return std::nullopt;
  const auto fits = [&](std::int64_t b) { return total_memory(mm, b) <= budget; };
  const bool monotone = mm.per_sample_activation_bytes >= 0.0 && mm.fit_mbatch.slope >= 0.0;

  if (!monotone) {
    // Clamped negative slopes make the total non-monotone; scan a bounded range.
    const std::int64_t limit = std::min<std::int64_t>(b_upper, std::int64_t{1} << 22);
    for (std::int64_t b = limit; b >= 1; --b) {
      if (fits(b)) return b;
    }
    return std::nullopt;
  }

  if (!fits(1)) return std::nullopt;
  if (fits(b_upper)) return b_upper;
  std::int64_t lo = 1;        // fits
  std::int64_t hi = b_upper;  // does not fit
  while (hi - lo > 1) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    (fits(mid) ? lo : hi) = mid;
  }
  return lo;
}

double step_time(const CostModel& cm, std::int64_t b, std::int64_t i) {
  if (cm.H < 1) throw std::invalid_argument("step_time: H must be >= 1");
  if (i < 0) throw std::invalid_argument("step_time: negative iteration");
  const auto batch = static_cast<double>(b);
  const double sync = is_sync_step(i, cm.H) ? cm.t_sync : 0.0;
  return cm.fit_tc.predict(batch) + cm.fit_tmov.predict(batch) + sync;
}

EpochTime epoch_time(const CostModel& cm, std::int64_t D, std::int64_t B) {
  if (B < 1) throw std::invalid_argument("epoch_time: batch size must be >= 1");
  if (B > D) throw std::invalid_argument("epoch_time: batch size exceeds dataset size");
  EpochTime out;
  out.iterations = (D + B - 1) / B;
  for (std::int64_t i = 0; i < out.iterations; ++i) out.seconds += step_time(cm, B, i);
  return out;
}

namespace {

std::vector<std::int64_t> sorted_candidates(std::span<const std::int64_t> candidates) {
  std::vector<std::int64_t> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  return sorted;
}

}  // namespace

Plan make_plan(const CostModel& cm, const MemoryModel& mm, std::int64_t D, double budget,
               std::span<const std::int64_t> candidates) {
  if (D < 1) throw std::invalid_argument("plan: dataset size must be positive");
  Plan plan;
  plan.b_max = max_batch(mm, budget, D);

  double best = 0.0;
  for (std::int64_t b : sorted_candidates(candidates)) {
    PlanRow row;
    row.batch_size = b;
    if (b < 1 || b > D) {
      plan.table.push_back(row);
      continue;
    }
    row.total_memory = total_memory(mm, b);
    row.feasible = row.total_memory <= budget;
    row.epoch = epoch_time(cm, D, b);
    const auto x = static_cast<double>(b);
    plan.clamped = plan.clamped || cm.fit_tc.clamps_at(x) || cm.fit_tmov.clamps_at(x) ||
                   mm.fit_mbatch.clamps_at(x);
    if (row.feasible && (!plan.b_opt || row.epoch.seconds < best - 1e-12 * std::abs(best))) {
      plan.b_opt = b;
      best = row.epoch.seconds;
    }
    plan.table.push_back(row);
  }
  return plan;
}

std::optional<std::int64_t> optimal_batch(const CostModel& cm, const MemoryModel& mm,
                                          std::int64_t D, double budget,
                                          std::span<const std::int64_t> candidates) {
  return make_plan(cm, mm, D, budget, candidates).b_opt;
}

std::vector<PerfSample> profile(const ModelSpec& spec, const ParamVector& params,
                                const Dataset& ds, std::span<const int> batches, int reps,
                                std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  if (reps < 3) throw std::invalid_argument("profile: reps must be >= 3");
  const auto n = static_cast<std::size_t>(ds.size());

  std::vector<PerfSample> out;
  Workspace<double> ws;
  for (std::size_t j = 0; j < batches.size(); ++j) {
    const int b = batches[j];
    if (b < 1 || static_cast<std::size_t>(b) > n) {
      throw std::invalid_argument("profile: batch size " + std::to_string(b) + " larger than dataset");
    }
    std::vector<double> t_c;
    std::vector<double> t_mov;
    std::vector<double> m_batch;
    // Untimed warm-up sizes the workspace and touches the caches.
    (void)backward(spec, params, gather_batch(ds, sample_rows(n, b, seed)), ws);
    for (int r = 0; r < reps; ++r) {
      const auto rows = sample_rows(n, static_cast<std::size_t>(b),
                                    derive_seed(seed, static_cast<std::uint64_t>(j) * 1000u + r));
      const std::size_t heap_before = heap_in_use();
      const auto t0 = clock::now();
      const Batch batch = gather_batch(ds, rows);
      const auto t1 = clock::now();
      const std::size_t heap_after = heap_in_use();
      const auto result = backward(spec, params, batch, ws);
      const auto t2 = clock::now();
      (void)result;

      t_mov.push_back(std::chrono::duration<double>(t1 - t0).count());
      t_c.push_back(std::chrono::duration<double>(t2 - t1).count());
      const double nominal = static_cast<double>(batch.features.size()) * sizeof(double) +
                             static_cast<double>(batch.labels.size()) * sizeof(int);
      m_batch.push_back(heap_probe_available() && heap_after >= heap_before
                            ? static_cast<double>(heap_after - heap_before)
                            : nominal);
    }
    out.push_back({b, median(t_c), median(t_mov), median(m_batch), reps});
  }
  return out;
}

CostFits fit_profile(std::span<const PerfSample> samples) {
  std::vector<std::pair<double, double>> tc;
  std::vector<std::pair<double, double>> tmov;
  std::vector<std::pair<double, double>> mb;
  for (const auto& s : samples) {
    const auto x = static_cast<double>(s.batch_size);
    tc.emplace_back(x, s.t_c);
    tmov.emplace_back(x, s.t_mov);
    mb.emplace_back(x, s.m_batch);
  }
  return {fit_linear(tc), fit_linear(tmov), fit_linear(mb)};
}

MemoryFootprint measure_training_memory(const ModelSpec& spec, const Dataset& ds, int b,
                                        int optimizer_multiplier, std::uint64_t seed) {
  if (optimizer_multiplier < 0) throw std::invalid_argument("optimizer multiplier must be >= 0");
  std::vector<std::size_t> rows = sample_rows(static_cast<std::size_t>(ds.size()),
                                              static_cast<std::size_t>(b), seed);

  const std::size_t before = heap_in_use();
  ParamVector params = init_params(spec, seed);
  std::vector<ParamVector> optimizer_slots(
      static_cast<std::size_t>(optimizer_multiplier),
      ParamVector::Zero(params.size()));
  Batch batch = gather_batch(ds, rows);
  Workspace<double> ws;
  auto [loss, grad] = backward(spec, params, batch, ws);
  params -= 0.01 * grad;
  const std::size_t after = heap_in_use();
  (void)loss;

  MemoryFootprint fp;
  const auto elems = static_cast<double>(params.size() + grad.size()) +
                     static_cast<double>(optimizer_slots.size()) * static_cast<double>(params.size());
  fp.accounted = elems * sizeof(double) + static_cast<double>(batch.features.size()) * sizeof(double) +
                 static_cast<double>(batch.labels.size()) * sizeof(int) + static_cast<double>(ws.bytes());
  fp.measured = heap_probe_available() && after >= before ? static_cast<double>(after - before)
                                                          : fp.accounted;
  return fp;
}

}  // namespace fedbatch
