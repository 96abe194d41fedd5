#include "oracles.hpp"

#include <fedbatch/fedsim.hpp>
#include <fedbatch/metrics_io.hpp>

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace fedbatch;

namespace {

struct Task {
  Dataset train;
  Dataset test;
  ModelSpec spec;
};

Task small_task(std::uint64_t seed = 1) {
  const Dataset ds = make_synthetic(4, 6, 60, 0.6, seed);
  auto [train, test] = train_test_split(ds, 0.75, seed + 1);
  return {std::move(train), std::move(test), ModelSpec{{6, 10, 4}}};
}

TrainConfig config(int iterations, int batch = 8) {
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.local_batch = batch;
  cfg.total_iterations = iterations;
  cfg.eval_every = 5;
  cfg.seed = 3;
  return cfg;
}

std::string metrics_text(const MetricsLog& log) {
  std::ostringstream out;
  write_metrics_csv(out, log);
  return out.str() + summary_json(log.summary).dump();
}

}  // namespace

TEST_CASE("aggregate_average") {
  const ParamVector a = ParamVector::Random(5);
  const std::vector<ParamVector> same{a, a, a};
  CHECK((aggregate_average(same).array() == a.array()).all());
  ParamVector z(1), t(1);
  z << 0.0;
  t << 2.0;
  CHECK(aggregate_average(std::vector<ParamVector>{z, t})[0] == 1.0);
  CHECK_THROWS(aggregate_average(std::vector<ParamVector>{}));
  CHECK_THROWS(aggregate_average(std::vector<ParamVector>{z, ParamVector::Zero(2)}));
}

TEST_CASE("aggregation is bit-identical under any arrival order") {
  std::vector<ClientUpdate> updates;
  for (int c = 0; c < 6; ++c) updates.push_back({c, ParamVector::Random(40) * std::pow(10.0, c - 3)});
  const std::vector<double> weights{1, 2, 3, 4, 5, 6};
  const ParamVector ref = aggregate_average(updates);
  const ParamVector wref = weighted_aggregate(updates, weights);
  std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5};
  while (std::next_permutation(perm.begin(), perm.end())) {
    std::vector<ClientUpdate> shuffled;
    std::vector<double> w;
    for (auto k : perm) {
      shuffled.push_back(updates[k]);
      w.push_back(weights[k]);
    }
    CHECK((aggregate_average(shuffled).array() == ref.array()).all());
    CHECK((weighted_aggregate(shuffled, w).array() == wref.array()).all());
  }
}

TEST_CASE("weighted_aggregate") {
  ParamVector z(1), f(1);
  z << 0.0;
  f << 4.0;
  const std::vector<ParamVector> two{z, f};
  CHECK(weighted_aggregate(two, std::vector<double>{1, 3})[0] == 3.0);
  CHECK(weighted_aggregate(two, std::vector<double>{1, 0})[0] == 0.0);
  const std::vector<ParamVector> many{ParamVector::Random(4), ParamVector::Random(4), ParamVector::Random(4)};
  CHECK((weighted_aggregate(many, std::vector<double>{2, 2, 2}) - aggregate_average(many)).cwiseAbs().maxCoeff() <=
        1e-15);
  CHECK_THROWS(weighted_aggregate(two, std::vector<double>{0, 0}));
  CHECK_THROWS(weighted_aggregate(two, std::vector<double>{1, -1}));
  CHECK_THROWS(weighted_aggregate(two, std::vector<double>{1}));
}

TEST_CASE("ShardSampler draws without replacement per epoch") {
  ClientShard shard{0, {10, 11, 12, 13, 14, 15, 16}};
  ShardSampler s(shard, 5);
  std::vector<std::size_t> seen;
  for (int k = 0; k < 3; ++k) {
    auto rows = s.next(2);
    seen.insert(seen.end(), rows.begin(), rows.end());
  }
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
  CHECK(s.epoch() == 0);
  s.next(2);  // only one row left: a new epoch starts
  CHECK(s.epoch() == 1);
  CHECK_THROWS(s.next(8));
  CHECK_THROWS(ShardSampler(ClientShard{}, 1));
}

TEST_CASE("local_round composition") {
  const Task t = small_task();
  const auto shards = partition_iid(t.train, 2, 1);
  const TrainConfig cfg = config(1);
  const ParamVector w0 = init_params(t.spec, 2);

  SUBCASE("h = 1 is one backward and one SGD step") {
    ClientState client(shards[0], cfg);
    ShardSampler replay(shards[0], derive_seed(cfg.seed, 1000));
    const auto out = local_round(t.spec, t.train, w0, client, cfg, 1);
    const auto g = backward(t.spec, w0, gather_batch(t.train, replay.next(8))).grad;
    CHECK((out.params.array() == sgd_step(w0, g, cfg.lr).array()).all());
  }
  SUBCASE("h = 3 equals three manual steps on the same stream") {
    ClientState client(shards[1], cfg);
    ShardSampler replay(shards[1], derive_seed(cfg.seed, 1001));
    const auto out = local_round(t.spec, t.train, w0, client, cfg, 3);
    ParamVector w = w0;
    for (int k = 0; k < 3; ++k) {
      w = sgd_step(w, backward(t.spec, w, gather_batch(t.train, replay.next(8))).grad, cfg.lr);
    }
    CHECK((out.params - w).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(out.steps.size() == 3);
  }
  SUBCASE("zero learning rate leaves parameters unchanged") {
    ClientState client(shards[0], cfg);
    TrainConfig frozen = cfg;
    frozen.lr = 0.0;
    CHECK((local_round(t.spec, t.train, w0, client, frozen, 4).params.array() == w0.array()).all());
  }
  SUBCASE("h must be positive") {
    ClientState client(shards[0], cfg);
    CHECK_THROWS(local_round(t.spec, t.train, w0, client, cfg, 0));
  }
}

TEST_CASE("gradient aggregation over 4 x 8 equals one worker at batch 32") {
  const Task t = small_task(4);
  const auto shards = partition_iid(t.train, 4, 2);
  TrainConfig cfg = config(50);
  const ParamVector w0 = init_params(t.spec, 9);

  std::vector<ParamVector> fed;
  run_federated(t.spec, t.train, shards, t.test, SyncPolicy::bsp(), cfg, w0,
                [&](int, const ParamVector& w) { fed.push_back(w); });

  std::vector<ShardSampler> replay;
  for (const auto& s : shards) replay.emplace_back(s, derive_seed(cfg.seed, 1000 + s.client_id));
  ParamVector w = w0;
  for (int i = 0; i < 50; ++i) {
    std::vector<std::size_t> rows;
    for (auto& r : replay) {
      const auto part = r.next(8);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    w = sgd_step(w, backward(t.spec, w, gather_batch(t.train, rows)).grad, cfg.lr);
    CHECK((fed[static_cast<std::size_t>(i)] - w).norm() <= 1e-9 * w.norm());
  }
}

TEST_CASE("one step with H = 1: parameter averaging equals gradient averaging") {
  const Task t = small_task(5);
  const auto shards = partition_iid(t.train, 3, 2);
  const TrainConfig cfg = config(1);
  const ParamVector w0 = init_params(t.spec, 4);
  const auto params = run_federated(t.spec, t.train, shards, t.test, SyncPolicy::fedavg(1), cfg, w0);
  const auto grads = run_federated(t.spec, t.train, shards, t.test, SyncPolicy::bsp(), cfg, w0);
  CHECK((params.final_params - grads.final_params).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("runs are deterministic and no-op policies do not interfere") {
  const Task t = small_task(6);
  const auto shards = partition_label_skew(t.train, 4, 1, 2);
  TrainConfig base = config(30);
  for (const SyncPolicy& sync : {SyncPolicy::bsp(), SyncPolicy::fedavg(4)}) {
    const std::string ref = metrics_text(run_federated(t.spec, t.train, shards, t.test, sync, base).log);
    CHECK(metrics_text(run_federated(t.spec, t.train, shards, t.test, sync, base).log) == ref);
    TrainConfig noop = base;
    noop.step_policy = StepPolicy{1.0, 0.5};
    noop.compression = CompressionSpec{};
    CHECK(metrics_text(run_federated(t.spec, t.train, shards, t.test, sync, noop).log) == ref);
  }
}

TEST_CASE("FedAvg sync schedule and byte accounting") {
  const Task t = small_task(7);
  const auto shards = partition_iid(t.train, 3, 2);
  TrainConfig cfg = config(10);
  const auto log = run_federated(t.spec, t.train, shards, t.test, SyncPolicy::fedavg(4), cfg).log;
  const std::size_t per_sync = 3 * t.spec.param_count() * 8;
  for (const auto& r : log.records) {
    const bool sync = r.iter == 3 || r.iter == 7 || r.iter == 9;  // 9: final flush
    CHECK(r.bytes_comm == (sync ? per_sync : 0));
    CHECK(std::isnan(r.test_acc) == !((r.iter + 1) % 5 == 0 || r.iter == 9));
  }
  CHECK(log.summary.total_bytes_comm == 3 * per_sync);
  CHECK(log.summary.global_batch == 24);
  CHECK(std::isnan(log.records[0].delta));
  CHECK(std::isfinite(log.records[1].delta));
}

TEST_CASE("FedAvg with H = total iterations reduces to averaged local SGD") {
  const Task t = small_task(8);
  const auto shards = partition_iid(t.train, 2, 3);
  const TrainConfig cfg = config(6);
  const ParamVector w0 = init_params(t.spec, 1);
  const auto fed = run_federated(t.spec, t.train, shards, t.test, SyncPolicy::fedavg(6), cfg, w0);
  std::vector<ParamVector> locals;
  for (const auto& s : shards) {
    ClientState client(s, cfg);
    locals.push_back(local_round(t.spec, t.train, w0, client, cfg, 6).params);
  }
  CHECK((fed.final_params - aggregate_average(locals)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("compression in gradient mode") {
  const Task t = small_task(9);
  const auto shards = partition_iid(t.train, 2, 3);
  TrainConfig cfg = config(5);
  cfg.compression = CompressionSpec{CompressionKind::topk, 0.1};
  const std::size_t P = t.spec.param_count();
  const std::size_t k = cfg.compression->kept(P);
  const auto log = run_federated(t.spec, t.train, shards, t.test, SyncPolicy::bsp(), cfg).log;
  for (const auto& r : log.records) CHECK(r.bytes_comm == 2 * k * 12);

  const auto fed = run_federated(t.spec, t.train, shards, t.test, SyncPolicy::fedavg(2), cfg).log;
  CHECK(fed.summary.notes.size() == 1);

  cfg.compression->accumulate_residual = true;
  const auto ef = run_federated(t.spec, t.train, shards, t.test, SyncPolicy::bsp(), cfg).log;
  CHECK(ef.records.back().bytes_comm == 2 * k * 12);
}

TEST_CASE("step scaling inside a run") {
  const Task t = small_task(10);
  const auto shards = partition_iid(t.train, 1, 3);
  TrainConfig cfg = config(40, 2);
  cfg.step_policy = StepPolicy{2.0, 0.5};
  const auto log = run_federated(t.spec, t.train, shards, t.test, SyncPolicy::bsp(), cfg).log;
  std::size_t total = 0;
  for (const auto& [f, c] : log.summary.factor_histogram) {
    CHECK((f == 1.0 || f == 2.0));
    total += c;
  }
  CHECK(total == 40);
  CHECK(log.records[0].scale_factor == 1.0);
  for (const auto& r : log.records) {
    if (r.iter > 0) CHECK(r.scale_factor == (r.delta >= 0.5 ? 2.0 : 1.0));
  }

  TrainConfig agg = cfg;
  agg.delta_source = DeltaSource::aggregated;
  const auto shards2 = partition_iid(t.train, 2, 3);
  const auto alog = run_federated(t.spec, t.train, shards2, t.test, SyncPolicy::bsp(), agg).log;
  for (const auto& r : alog.records) CHECK((r.scale_factor == 1.0 || r.scale_factor == 2.0));
  CHECK_THROWS(run_federated(t.spec, t.train, shards2, t.test, SyncPolicy::fedavg(2), agg));
}

TEST_CASE("logical clock follows the cost model") {
  const Task t = small_task(11);
  const auto shards = partition_iid(t.train, 2, 3);
  TrainConfig cfg = config(8);
  cfg.cost_model = CostModel{{0.0, 0.01, 0, 2}, {0.0, 0.0, 0, 2}, 0.5, 1};
  const auto log = run_federated(t.spec, t.train, shards, t.test, SyncPolicy::fedavg(4), cfg).log;
  CHECK(log.summary.simulated_time == doctest::Approx(8 * 0.01 + 2 * 0.5));
}

TEST_CASE("run_federated input validation") {
  const Task t = small_task(12);
  const auto shards = partition_iid(t.train, 2, 3);
  const TrainConfig cfg = config(3);
  CHECK_THROWS(run_federated(t.spec, t.train, {}, t.test, SyncPolicy::bsp(), cfg));
  CHECK_THROWS(run_federated(t.spec, t.train, shards, t.test, SyncPolicy{2, Payload::gradients}, cfg));
  CHECK_THROWS(run_federated(ModelSpec{{5, 4}}, t.train, shards, t.test, SyncPolicy::bsp(), cfg));
  TrainConfig huge = cfg;
  huge.local_batch = 1000;
  CHECK_THROWS(run_federated(t.spec, t.train, shards, t.test, SyncPolicy::bsp(), huge));
  TrainConfig bad = cfg;
  bad.lr = 0.0;
  CHECK_THROWS(run_federated(t.spec, t.train, shards, t.test, SyncPolicy::bsp(), bad));
  CHECK_THROWS(run_federated(t.spec, t.train, shards, t.test, SyncPolicy::bsp(), cfg, ParamVector::Zero(3)));
}

TEST_CASE("epoch_sync_period uses the largest shard") {
  std::vector<ClientShard> shards{{0, std::vector<std::size_t>(40)}, {1, std::vector<std::size_t>(75)}};
  CHECK(epoch_sync_period(shards, 8) == 9);
  CHECK(epoch_sync_period(shards, 100) == 1);
}
