#include <fedbatch/cli/config.hpp>

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <set>

namespace fedbatch::cli {

namespace {

// A mapping node plus its dotted path, with strict key checking.
class Section {
 public:
  Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (!node_.IsMap()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected a mapping");
  }

  void allow(std::initializer_list<const char*> keys) const {
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) throw ConfigError(child(key), "unknown key");
    }
  }

  bool has(const std::string& key) const { return static_cast<bool>(node_[key]); }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  T get(const std::string& key) const {
    if (!has(key)) throw ConfigError(child(key), "missing required field");
    return convert<T>(node_[key], child(key));
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) const {
    return has(key) ? get<T>(key) : fallback;
  }

  Section section(const std::string& key) const {
    if (!has(key)) throw ConfigError(child(key), "missing required section");
    return {node_[key], child(key)};
  }

  YAML::Node raw(const std::string& key) const { return node_[key]; }

  template <typename T>
  static T convert(const YAML::Node& node, const std::string& path) {
    try {
      return node.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(path, "has the wrong type");
    }
  }

 private:
  YAML::Node node_;
  std::string path_;
};

int positive(int v, const std::string& path) {
  if (v <= 0) throw ConfigError(path, "must be positive");
  return v;
}

DataConfig parse_data(const Section& s) {
  s.allow({"num_classes", "dim", "per_class", "spread", "train_fraction", "csv"});
  DataConfig d;
  d.train_fraction = s.get_or<double>("train_fraction", 0.8);
  if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0)) {
    throw ConfigError(s.child("train_fraction"), "must lie in (0, 1)");
  }
  if (s.has("csv")) {
    d.csv = s.get<std::string>("csv");
    return d;
  }
  d.num_classes = positive(s.get<int>("num_classes"), s.child("num_classes"));
  d.dim = positive(s.get<int>("dim"), s.child("dim"));
  d.per_class = positive(s.get<int>("per_class"), s.child("per_class"));
  d.spread = s.get<double>("spread");
  if (d.spread < 0) throw ConfigError(s.child("spread"), "must be nonnegative");
  return d;
}

ModelConfig parse_model(const Section& s) {
  s.allow({"hidden", "activation", "bytes_per_element"});
  ModelConfig m;
  m.hidden = s.get_or<std::vector<int>>("hidden", {});
  for (int w : m.hidden) positive(w, s.child("hidden"));
  try {
    m.activation = activation_from_string(s.get_or<std::string>("activation", "relu"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(s.child("activation"), e.what());
  }
  m.bytes_per_element = positive(s.get_or<int>("bytes_per_element", 8), s.child("bytes_per_element"));
  return m;
}

PartitionSpec parse_partition(const Section& s) {
  s.allow({"mode", "num_clients", "labels_per_client"});
  PartitionSpec p;
  const auto mode = s.get<std::string>("mode");
  if (mode == "iid") {
    p.mode = PartitionMode::iid;
  } else if (mode == "label_skew") {
    p.mode = PartitionMode::label_skew;
    p.labels_per_client = positive(s.get<int>("labels_per_client"), s.child("labels_per_client"));
  } else {
    throw ConfigError(s.child("mode"), "must be iid or label_skew");
  }
  p.num_clients = positive(s.get<int>("num_clients"), s.child("num_clients"));
  return p;
}

void parse_train(const Section& s, TrainConfig& t, bool partial) {
  s.allow({"lr", "local_batch", "total_iterations", "eval_every", "delta_source"});
  auto field = [&](const char* key, auto& out) {
    using T = std::decay_t<decltype(out)>;
    if (partial) {
      if (s.has(key)) out = s.get<T>(key);
    } else {
      out = s.get<T>(key);
    }
  };
  field("lr", t.lr);
  field("local_batch", t.local_batch);
  field("total_iterations", t.total_iterations);
  if (s.has("eval_every")) t.eval_every = s.get<int>("eval_every");
  if (!(t.lr > 0)) throw ConfigError(s.child("lr"), "must be positive");
  positive(t.local_batch, s.child("local_batch"));
  positive(t.total_iterations, s.child("total_iterations"));
  positive(t.eval_every, s.child("eval_every"));
  if (s.has("delta_source")) {
    const auto src = s.get<std::string>("delta_source");
    if (src == "per_client") {
      t.delta_source = DeltaSource::per_client;
    } else if (src == "aggregated") {
      t.delta_source = DeltaSource::aggregated;
    } else {
      throw ConfigError(s.child("delta_source"), "must be per_client or aggregated");
    }
  }
}

StepPolicy parse_step_policy(const Section& s) {
  s.allow({"X", "threshold", "warmup_iters", "invert_branches"});
  StepPolicy p;
  p.X = s.get<double>("X");
  p.threshold = s.get<double>("threshold");
  p.warmup_iters = s.get_or<int>("warmup_iters", 1);
  p.invert_branches = s.get_or<bool>("invert_branches", false);
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(s.child("X"), e.what());
  }
  return p;
}

CompressionSpec parse_compression(const Section& s) {
  s.allow({"kind", "ratio", "accumulate_residual"});
  CompressionSpec c;
  const auto kind = s.get<std::string>("kind");
  if (kind == "none") {
    c.kind = CompressionKind::none;
  } else if (kind == "topk") {
    c.kind = CompressionKind::topk;
  } else {
    throw ConfigError(s.child("kind"), "must be none or topk");
  }
  c.ratio = s.get_or<double>("ratio", 1.0);
  if (!(c.ratio > 0.0 && c.ratio <= 1.0)) throw ConfigError(s.child("ratio"), "must lie in (0, 1]");
  c.accumulate_residual = s.get_or<bool>("accumulate_residual", false);
  return c;
}

CostModel parse_cost_model(const Section& s) {
  s.allow({"tc_slope", "tc_intercept", "tmov_slope", "tmov_intercept", "t_sync"});
  CostModel cm;
  cm.fit_tc.slope = s.get<double>("tc_slope");
  cm.fit_tc.intercept = s.get_or<double>("tc_intercept", 0.0);
  cm.fit_tmov.slope = s.get_or<double>("tmov_slope", 0.0);
  cm.fit_tmov.intercept = s.get_or<double>("tmov_intercept", 0.0);
  cm.t_sync = s.get_or<double>("t_sync", 0.0);
  if (cm.t_sync < 0) throw ConfigError(s.child("t_sync"), "must be nonnegative");
  return cm;
}

SyncConfig parse_sync(const Section& s) {
  s.allow({"H", "payload", "weighted"});
  SyncConfig sc;
  const YAML::Node h = s.raw("H");
  if (!h) throw ConfigError(s.child("H"), "missing required field");
  if (h.IsScalar() && h.Scalar() == "epoch") {
    sc.H.reset();
  } else {
    sc.H = positive(Section::convert<int>(h, s.child("H")), s.child("H"));
  }
  const auto payload = s.get_or<std::string>("payload", "parameters");
  if (payload == "parameters") {
    sc.payload = Payload::parameters;
  } else if (payload == "gradients") {
    sc.payload = Payload::gradients;
    if (!sc.H || *sc.H != 1) throw ConfigError(s.child("H"), "gradient payload requires H = 1");
  } else {
    throw ConfigError(s.child("payload"), "must be parameters or gradients");
  }
  sc.weighted = s.get_or<bool>("weighted", false);
  return sc;
}

}  // namespace

ModelSpec ModelConfig::spec(int input_dim, int num_classes) const {
  ModelSpec s;
  s.layer_widths.push_back(input_dim);
  s.layer_widths.insert(s.layer_widths.end(), hidden.begin(), hidden.end());
  s.layer_widths.push_back(num_classes);
  s.activation = activation;
  s.bytes_per_element = bytes_per_element;
  return s;
}

ExperimentConfig parse_experiment(const YAML::Node& root) {
  const Section top(root, "");
  top.allow({"name", "output_dir", "seeds", "data", "model", "partition", "train", "step_policy",
             "compression", "cost_model", "runs"});

  ExperimentConfig cfg;
  cfg.name = top.get<std::string>("name");
  cfg.output_dir = top.get_or<std::string>("output_dir", "out/" + cfg.name);
  cfg.seeds = top.get<std::vector<std::uint64_t>>("seeds");
  if (cfg.seeds.empty()) throw ConfigError("seeds", "must list at least one seed");
  cfg.data = parse_data(top.section("data"));
  cfg.model = parse_model(top.section("model"));
  cfg.partition = parse_partition(top.section("partition"));

  TrainConfig base;
  parse_train(top.section("train"), base, false);
  if (top.has("step_policy")) base.step_policy = parse_step_policy(top.section("step_policy"));
  if (top.has("compression")) base.compression = parse_compression(top.section("compression"));
  if (top.has("cost_model")) base.cost_model = parse_cost_model(top.section("cost_model"));

  const YAML::Node runs = top.raw("runs");
  if (!runs) throw ConfigError("runs", "missing required section");
  if (!runs.IsSequence() || runs.size() == 0) throw ConfigError("runs", "must be a non-empty list");
  std::set<std::string> names;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const Section r(runs[k], "runs[" + std::to_string(k) + "]");
    r.allow({"name", "sync", "train", "step_policy", "compression"});
    RunConfig run;
    run.name = r.get<std::string>("name");
    if (!names.insert(run.name).second) throw ConfigError(r.child("name"), "duplicate run name");
    run.sync = parse_sync(r.section("sync"));
    run.train = base;
    if (r.has("train")) parse_train(r.section("train"), run.train, true);
    if (r.has("step_policy")) run.train.step_policy = parse_step_policy(r.section("step_policy"));
    if (r.has("compression")) run.train.compression = parse_compression(r.section("compression"));
    if (run.train.delta_source == DeltaSource::aggregated && run.sync.payload != Payload::gradients) {
      throw ConfigError(r.child("train.delta_source"), "aggregated delta source needs the gradient payload");
    }
    cfg.runs.push_back(std::move(run));
  }
  return cfg;
}

namespace {

YAML::Node load_yaml(const std::filesystem::path& path) {
  try {
    return YAML::LoadFile(path.string());
  } catch (const YAML::BadFile&) {
    throw ConfigError(path.string(), "cannot open file");
  } catch (const YAML::ParserException& e) {
    throw ConfigError(path.string(), std::string("parse error: ") + e.what());
  }
}

}  // namespace

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  auto cfg = parse_experiment(load_yaml(path));
  if (cfg.data.csv && cfg.data.csv->is_relative()) cfg.data.csv = path.parent_path() / *cfg.data.csv;
  return cfg;
}

ModelFile parse_model_file(const YAML::Node& root) {
  const Section top(root, "");
  top.allow({"name", "data", "model"});
  ModelFile f;
  f.name = top.get_or<std::string>("name", "model");
  f.data = parse_data(top.section("data"));
  f.model = parse_model(top.section("model"));
  return f;
}

ModelFile load_model_file(const std::filesystem::path& path) {
  auto f = parse_model_file(load_yaml(path));
  if (f.data.csv && f.data.csv->is_relative()) f.data.csv = path.parent_path() / *f.data.csv;
  return f;
}

SeededData build_data(const DataConfig& data, std::uint64_t seed) {
  Dataset full = data.csv ? load_csv_dataset(*data.csv)
                          : make_synthetic(data.num_classes, data.dim, data.per_class, data.spread, seed);
  auto [train, test] = train_test_split(full, data.train_fraction, derive_seed(seed, 1));
  return {std::move(train), std::move(test)};
}

}  // namespace fedbatch::cli
