#include <fedbatch/fedsim.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace fedbatch {

void SyncPolicy::validate() const {
  if (H < 1) throw std::invalid_argument("sync policy: H must be >= 1");
  if (payload == Payload::gradients && H != 1) {
    throw std::invalid_argument("sync policy: gradient payload aggregates every step (H must be 1)");
  }
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
  if (local_batch < 1) throw std::invalid_argument("train: local_batch must be >= 1");
  if (total_iterations < 1) throw std::invalid_argument("train: total_iterations must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("train: eval_every must be >= 1");
  if (step_policy) step_policy->validate();
  if (compression) compression->validate();
}

std::vector<double> MetricsLog::scale_factors() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.scale_factor);
  return out;
}

std::vector<double> MetricsLog::grad_norms_sq() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.grad_norm_sq);
  return out;
}

namespace {

std::vector<std::size_t> id_order(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw std::invalid_argument("aggregate: no client updates");
  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updates[a].client_id < updates[b].client_id;
  });
  const auto length = updates[order.front()].values.size();
  for (const auto& u : updates) {
    if (u.values.size() != length) throw std::invalid_argument("aggregate: client vectors differ in length");
  }
  return order;
}

std::vector<ClientUpdate> as_updates(std::span<const ParamVector> client_params) {
  std::vector<ClientUpdate> updates;
  updates.reserve(client_params.size());
  for (std::size_t c = 0; c < client_params.size(); ++c) {
    updates.push_back({static_cast<int>(c), client_params[c]});
  }
  return updates;
}

}  // namespace

// Both averages are taken relative to the lowest-id client's vector, so that
// identical inputs reproduce that input exactly.
ParamVector aggregate_average(std::span<const ClientUpdate> updates) {
  const auto order = id_order(updates);
  const ParamVector& anchor = updates[order.front()].values;
  ParamVector sum = ParamVector::Zero(anchor.size());
  for (std::size_t k = 1; k < order.size(); ++k) sum += updates[order[k]].values - anchor;
  return anchor + sum / static_cast<double>(updates.size());
}

ParamVector aggregate_average(std::span<const ParamVector> client_params) {
  const auto updates = as_updates(client_params);
  return aggregate_average(updates);
}

ParamVector weighted_aggregate(std::span<const ClientUpdate> updates, std::span<const double> weights) {
  if (weights.size() != updates.size()) {
    throw std::invalid_argument("weighted_aggregate: one weight per client required");
  }
  const auto order = id_order(updates);
  double total = 0.0;
  for (std::size_t k : order) {
    if (!(weights[k] >= 0.0)) throw std::invalid_argument("weighted_aggregate: weights must be nonnegative");
    total += weights[k];
  }
  if (!(total > 0.0)) throw std::invalid_argument("weighted_aggregate: weights sum to zero");
  const ParamVector& anchor = updates[order.front()].values;
  ParamVector sum = ParamVector::Zero(anchor.size());
  for (std::size_t k : order) sum += weights[k] * (updates[k].values - anchor);
  return anchor + sum / total;
}

ParamVector weighted_aggregate(std::span<const ParamVector> client_params,
                               std::span<const double> weights) {
  const auto updates = as_updates(client_params);
  return weighted_aggregate(updates, weights);
}

ShardSampler::ShardSampler(const ClientShard& shard, std::uint64_t seed)
    : order_(shard.indices), seed_(seed) {
  if (order_.empty()) throw std::invalid_argument("sampler: empty shard");
  reshuffle();
}

void ShardSampler::reshuffle() {
  std::mt19937_64 rng(derive_seed(seed_, epoch_));
  std::shuffle(order_.begin(), order_.end(), rng);
  cursor_ = 0;
}

std::vector<std::size_t> ShardSampler::next(std::size_t b) {
  if (b > order_.size()) {
    throw std::invalid_argument("sampler: batch size " + std::to_string(b) + " exceeds shard size " +
                                std::to_string(order_.size()));
  }
  if (cursor_ + b > order_.size()) {
    ++epoch_;
    reshuffle();
  }
  std::vector<std::size_t> rows(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + b));
  cursor_ += b;
  return rows;
}

ClientState::ClientState(const ClientShard& shard, const TrainConfig& cfg)
    : client_id(shard.client_id),
      shard_size(shard.size()),
      sampler(shard, derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(shard.client_id))) {
  if (cfg.step_policy) mapper = step_mapper(*cfg.step_policy);
}

namespace {

struct MappedGradient {
  GradientVector grad;
  LocalStep stats;
};

// One client gradient: sample, backprop, then the step-function mapper (or
// plain norm tracking when none is configured).
MappedGradient client_gradient(const ModelSpec& spec, const Dataset& train, const ParamVector& params,
                               ClientState& client, const TrainConfig& cfg, bool track) {
  const auto rows = client.sampler.next(static_cast<std::size_t>(cfg.local_batch));
  auto [loss, grad] = backward(spec, params, gather_batch(train, rows), client.ws);
  MappedGradient out;
  out.stats.loss = loss;
  out.stats.grad_norm_sq = grad.squaredNorm();
  out.stats.delta = std::numeric_limits<double>::quiet_NaN();
  if (!track) {
    out.grad = std::move(grad);
  } else if (client.mapper) {
    out.grad = client.mapper->map(grad);
    out.stats.delta = client.mapper->last().delta;
    out.stats.factor = client.mapper->last().factor;
  } else {
    out.stats.delta = client.tracker.observe(out.stats.grad_norm_sq);
    out.grad = std::move(grad);
  }
  return out;
}

double mean_of(const std::vector<double>& xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

}  // namespace

LocalRound local_round(const ModelSpec& spec, const Dataset& train, ParamVector params,
                       ClientState& client, const TrainConfig& cfg, int h) {
  if (h < 1) throw std::invalid_argument("local_round: h must be >= 1");
  LocalRound round;
  round.steps.reserve(static_cast<std::size_t>(h));
  for (int k = 0; k < h; ++k) {
    auto step = client_gradient(spec, train, params, client, cfg, true);
    params = sgd_step(params, step.grad, cfg.lr);
    round.steps.push_back(step.stats);
  }
  round.params = std::move(params);
  return round;
}

int epoch_sync_period(std::span<const ClientShard> shards, int local_batch) {
  if (local_batch < 1) throw std::invalid_argument("epoch_sync_period: batch must be >= 1");
  std::size_t largest = 0;
  for (const auto& s : shards) largest = std::max(largest, s.size());
  return std::max(1, static_cast<int>(largest / static_cast<std::size_t>(local_batch)));
}

FederatedResult run_federated(const ModelSpec& spec, const Dataset& train,
                              std::span<const ClientShard> shards, const Dataset& test,
                              const SyncPolicy& sync, const TrainConfig& cfg,
                              std::optional<ParamVector> initial, const StepObserver& observer) {
  spec.validate();
  sync.validate();
  cfg.validate();
  if (shards.empty()) throw std::invalid_argument("run_federated: no clients");
  if (train.dim() != spec.input_dim() || test.dim() != spec.input_dim()) {
    throw std::invalid_argument("run_federated: dataset dimension does not match model input");
  }
  for (const auto& s : shards) {
    if (s.size() < static_cast<std::size_t>(cfg.local_batch)) {
      throw std::invalid_argument("run_federated: client " + std::to_string(s.client_id) +
                                  " shard smaller than local batch");
    }
  }
  const bool aggregated_delta = cfg.delta_source == DeltaSource::aggregated;
  if (aggregated_delta && sync.payload != Payload::gradients) {
    throw std::invalid_argument("run_federated: aggregated delta source needs the gradient payload");
  }

  // Clients are kept in ascending id order so every reduction sums the same way.
  std::vector<ClientShard> ordered(shards.begin(), shards.end());
  std::sort(ordered.begin(), ordered.end(),
            [](const ClientShard& a, const ClientShard& b) { return a.client_id < b.client_id; });
  std::vector<ClientState> clients;
  clients.reserve(ordered.size());
  for (const auto& s : ordered) clients.emplace_back(s, cfg);
  std::vector<double> weights;
  for (const auto& c : clients) weights.push_back(static_cast<double>(c.shard_size));

  const auto num_clients = static_cast<int>(clients.size());
  const std::size_t P = spec.param_count();
  const bool compress = sync.payload == Payload::gradients && cfg.compression &&
                        cfg.compression->kind == CompressionKind::topk;

  ParamVector global = initial ? std::move(*initial) : init_params(spec, derive_seed(cfg.seed, 1));
  if (static_cast<std::size_t>(global.size()) != P) {
    throw std::invalid_argument("run_federated: initial parameters do not match model");
  }

  FederatedResult result;
  MetricsLog& log = result.log;
  RunSummary& summary = log.summary;
  summary.tag = sync.tag;
  summary.seed = cfg.seed;
  summary.iterations = cfg.total_iterations;
  summary.H = sync.H;
  summary.num_clients = num_clients;
  summary.global_batch = num_clients * cfg.local_batch;
  if (cfg.compression && cfg.compression->kind == CompressionKind::topk && !compress) {
    summary.notes.emplace_back("compression ignored: parameter averaging is sent uncompressed");
  }
  const bool unequal = std::adjacent_find(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
                         return a.size() != b.size();
                       }) != ordered.end();
  if (unequal && sync.payload == Payload::parameters) {
    summary.notes.emplace_back("shard sizes differ; per-client epoch lengths differ from H");
  }

  std::unique_ptr<StepMapper> global_mapper;
  NormTracker global_tracker;
  if (aggregated_delta && cfg.step_policy) global_mapper = step_mapper(*cfg.step_policy);

  std::vector<ParamVector> local(clients.size(), global);
  auto aggregate = [&](std::span<const ParamVector> vs) {
    return sync.weighted ? weighted_aggregate(vs, weights) : aggregate_average(vs);
  };

  CostModel clock;
  if (cfg.cost_model) {
    clock = *cfg.cost_model;
    clock.H = sync.H;
  }

  log.records.reserve(static_cast<std::size_t>(cfg.total_iterations));
  for (int i = 0; i < cfg.total_iterations; ++i) {
    IterationRecord rec;
    rec.iter = i;
    std::vector<double> losses;
    std::vector<double> norms;
    std::vector<double> deltas;
    std::vector<double> factors;

    if (sync.payload == Payload::gradients) {
      std::vector<GradientVector> sent;
      sent.reserve(clients.size());
      for (auto& client : clients) {
        auto step = client_gradient(spec, train, global, client, cfg, !aggregated_delta);
        losses.push_back(step.stats.loss);
        norms.push_back(step.stats.grad_norm_sq);
        deltas.push_back(step.stats.delta);
        factors.push_back(step.stats.factor);
        if (compress) {
          GradientVector g = std::move(step.grad);
          if (cfg.compression->accumulate_residual) {
            if (client.residual.size() == 0) client.residual = GradientVector::Zero(g.size());
            g += client.residual;
          }
          const SparseUpdate sparse = topk_compress(g, *cfg.compression);
          if (cfg.compression->accumulate_residual) client.residual = decompose(g, sparse);
          rec.bytes_comm += wire_bytes(sparse);
          sent.push_back(densify(sparse));
        } else {
          rec.bytes_comm += dense_wire_bytes(P);
          sent.push_back(std::move(step.grad));
        }
      }
      GradientVector update = aggregate(sent);
      if (aggregated_delta) {
        const double sq = update.squaredNorm();
        norms.assign(1, sq);
        if (global_mapper) {
          update = global_mapper->map(update);
          deltas.assign(1, global_mapper->last().delta);
          factors.assign(1, global_mapper->last().factor);
        } else {
          deltas.assign(1, global_tracker.observe(sq));
          factors.assign(1, 1.0);
        }
      }
      global = sgd_step(global, update, cfg.lr);
    } else {
      for (std::size_t c = 0; c < clients.size(); ++c) {
        LocalRound round = local_round(spec, train, std::move(local[c]), clients[c], cfg, 1);
        local[c] = std::move(round.params);
        const LocalStep& step = round.steps.front();
        losses.push_back(step.loss);
        norms.push_back(step.grad_norm_sq);
        deltas.push_back(step.delta);
        factors.push_back(step.factor);
      }
      const bool last = i + 1 == cfg.total_iterations;
      if (is_sync_step(i, sync.H) || last) {
        // The final flush makes the reported model the average of all local work.
        global = aggregate(local);
        std::fill(local.begin(), local.end(), global);
        rec.bytes_comm += clients.size() * dense_wire_bytes(P);
      }
    }

    rec.loss = mean_of(losses);
    rec.grad_norm_sq = mean_of(norms);
    rec.delta = mean_of(deltas);
    rec.scale_factor = mean_of(factors);
    rec.test_acc = std::numeric_limits<double>::quiet_NaN();
    if ((i + 1) % cfg.eval_every == 0 || i + 1 == cfg.total_iterations) {
      rec.test_acc = accuracy(spec, global, test.features, test.labels);
    }
    summary.total_bytes_comm += rec.bytes_comm;
    if (cfg.cost_model) summary.simulated_time += step_time(clock, cfg.local_batch, i);
    log.records.push_back(rec);
    if (observer) observer(i, global);
  }

  summary.final_test_acc = log.records.back().test_acc;
  summary.final_loss = log.records.back().loss;
  summary.factor_histogram = factor_histogram(log.scale_factors());
  result.final_params = std::move(global);
  return result;
}

}  // namespace fedbatch
