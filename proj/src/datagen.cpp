#include <fedbatch/datagen.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fedbatch {

void Dataset::validate() const {
  if (num_classes <= 0) throw std::invalid_argument("dataset has no classes");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw std::invalid_argument("dataset features and labels disagree on size");
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw std::invalid_argument("dataset label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) {
      throw std::invalid_argument("class " + std::to_string(k) + " has no samples");
    }
  }
}

Dataset make_synthetic(int num_classes, int dim, int per_class, double spread,
                       std::uint64_t seed) {
  if (num_classes <= 0 || dim <= 0 || per_class <= 0 || spread < 0) {
    throw std::invalid_argument("make_synthetic: sizes must be positive and spread nonnegative");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix<double> centers(num_classes, dim);
  for (int k = 0; k < num_classes; ++k) {
    Vector<double> c(dim);
    do {
      for (int j = 0; j < dim; ++j) c(j) = normal(rng);
    } while (c.norm() == 0.0);
    centers.row(k) = 2.0 * c.normalized().transpose();
  }

  Dataset ds;
  ds.num_classes = num_classes;
  ds.name = "blobs";
  ds.features.resize(static_cast<Eigen::Index>(num_classes) * per_class, dim);
  ds.labels.reserve(ds.features.rows());
  Eigen::Index row = 0;
  for (int k = 0; k < num_classes; ++k) {
    for (int s = 0; s < per_class; ++s, ++row) {
      for (int j = 0; j < dim; ++j) ds.features(row, j) = centers(k, j) + spread * normal(rng);
      ds.labels.push_back(k);
    }
  }
  return ds;
}

namespace {

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& rows, std::string name) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.name = std::move(name);
  out.features.resize(static_cast<Eigen::Index>(rows.size()), ds.dim());
  out.labels.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.features.row(static_cast<Eigen::Index>(k)) = ds.features.row(static_cast<Eigen::Index>(rows[k]));
    out.labels.push_back(ds.labels[rows[k]]);
  }
  return out;
}

std::vector<std::vector<std::size_t>> rows_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t r = 0; r < ds.labels.size(); ++r) {
    by_class[static_cast<std::size_t>(ds.labels[r])].push_back(r);
  }
  return by_class;
}

}  // namespace

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double train_fraction,
                                             std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train_fraction must lie in (0, 1)");
  }
  ds.validate();
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  for (auto& rows : rows_by_class(ds)) {
    if (rows.size() < 2) {
      throw std::invalid_argument("train_test_split: every class needs at least two samples");
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rows.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, rows.size() - 1);
    train_rows.insert(train_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_rows.insert(test_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());
  return {subset(ds, train_rows, ds.name + "/train"), subset(ds, test_rows, ds.name + "/test")};
}

std::vector<ClientShard> partition_iid(const Dataset& ds, int num_clients, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(ds.size());
  if (num_clients <= 0) throw std::invalid_argument("partition_iid: need at least one client");
  if (static_cast<std::size_t>(num_clients) > n) {
    throw std::invalid_argument("partition_iid: more clients than samples");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<ClientShard> shards(static_cast<std::size_t>(num_clients));
  for (int c = 0; c < num_clients; ++c) shards[static_cast<std::size_t>(c)].client_id = c;
  for (std::size_t k = 0; k < n; ++k) shards[k % shards.size()].indices.push_back(order[k]);
  return shards;
}

std::vector<std::vector<int>> assign_labels(int num_classes, int num_clients,
                                            int labels_per_client, std::uint64_t seed) {
  if (num_clients <= 0 || labels_per_client <= 0) {
    throw std::invalid_argument("label skew: clients and labels_per_client must be positive");
  }
  if (labels_per_client > num_classes) {
    throw std::invalid_argument("label skew: labels_per_client exceeds number of classes");
  }
  const auto slots = static_cast<std::size_t>(num_clients) * labels_per_client;
  if (slots < static_cast<std::size_t>(num_classes)) {
    throw std::invalid_argument("label skew: clients x labels_per_client cannot cover every class");
  }

  const auto lpc = static_cast<std::size_t>(labels_per_client);
  const std::size_t copies = (slots + num_classes - 1) / num_classes;
  std::mt19937_64 rng(seed);

  // Each copy of the label list is shuffled separately, so the first
  // num_classes slots always form a full permutation (coverage) and label
  // multiplicities differ by at most one.
  std::vector<int> deal;
  deal.reserve(copies * num_classes);
  for (std::size_t c = 0; c < copies; ++c) {
    std::vector<int> copy(static_cast<std::size_t>(num_classes));
    std::iota(copy.begin(), copy.end(), 0);
    std::shuffle(copy.begin(), copy.end(), rng);
    deal.insert(deal.end(), copy.begin(), copy.end());
  }
  deal.resize(slots);

  auto owner = [lpc](std::size_t slot) { return slot / lpc; };
  auto holds = [&](std::size_t client, int label, std::size_t skip) {
    for (std::size_t s = client * lpc; s < (client + 1) * lpc; ++s) {
      if (s != skip && deal[s] == label) return true;
    }
    return false;
  };

  // Re-deal duplicates: swap a repeated label with a slot of another client
  // where the exchange leaves both clients duplicate-free.
  for (std::size_t s = 0; s < slots; ++s) {
    if (!holds(owner(s), deal[s], s)) continue;
    bool fixed = false;
    for (std::size_t t = 0; t < slots && !fixed; ++t) {
      if (owner(t) == owner(s) || deal[t] == deal[s]) continue;
      if (holds(owner(s), deal[t], s) || holds(owner(t), deal[s], t)) continue;
      std::swap(deal[s], deal[t]);
      fixed = true;
    }
    if (!fixed) throw std::logic_error("label skew: could not resolve duplicate label");
  }

  std::vector<std::vector<int>> labels(static_cast<std::size_t>(num_clients));
  for (std::size_t s = 0; s < slots; ++s) labels[owner(s)].push_back(deal[s]);
  for (auto& l : labels) std::sort(l.begin(), l.end());
  return labels;
}

std::vector<ClientShard> partition_label_skew(const Dataset& ds, int num_clients,
                                              int labels_per_client, std::uint64_t seed) {
  ds.validate();
  const auto assignment = assign_labels(ds.num_classes, num_clients, labels_per_client, seed);

  std::vector<std::vector<int>> owners(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t c = 0; c < assignment.size(); ++c) {
    for (int label : assignment[c]) owners[static_cast<std::size_t>(label)].push_back(static_cast<int>(c));
  }

  std::vector<ClientShard> shards(static_cast<std::size_t>(num_clients));
  for (int c = 0; c < num_clients; ++c) shards[static_cast<std::size_t>(c)].client_id = c;

  std::mt19937_64 rng(derive_seed(seed, 1));
  auto by_class = rows_by_class(ds);
  for (std::size_t label = 0; label < by_class.size(); ++label) {
    auto& rows = by_class[label];
    const auto& who = owners[label];
    if (rows.size() < who.size()) {
      throw std::invalid_argument("label skew: class " + std::to_string(label) +
                                  " has fewer samples than owning clients");
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      shards[static_cast<std::size_t>(who[k % who.size()])].indices.push_back(rows[k]);
    }
  }
  for (auto& shard : shards) std::sort(shard.indices.begin(), shard.indices.end());
  return shards;
}

std::vector<ClientShard> partition(const Dataset& ds, const PartitionSpec& spec) {
  if (spec.mode == PartitionMode::iid) return partition_iid(ds, spec.num_clients, spec.seed);
  return partition_label_skew(ds, spec.num_clients, spec.labels_per_client, spec.seed);
}

Batch gather_batch(const Dataset& ds, std::span<const std::size_t> rows) {
  Batch batch;
  batch.features.resize(static_cast<Eigen::Index>(rows.size()), ds.dim());
  batch.labels.resize(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= static_cast<std::size_t>(ds.size())) {
      throw std::out_of_range("gather_batch: row index out of range");
    }
    batch.features.row(static_cast<Eigen::Index>(k)) = ds.features.row(static_cast<Eigen::Index>(rows[k]));
    batch.labels[k] = ds.labels[rows[k]];
  }
  return batch;
}

std::vector<std::size_t> sample_rows(std::size_t n, std::size_t count, std::uint64_t seed) {
  if (count > n) throw std::invalid_argument("sample_rows: batch larger than dataset");
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  if (count < n) {
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates.
    for (std::size_t k = 0; k < count; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, n - 1);
      std::swap(rows[k], rows[pick(rng)]);
    }
    rows.resize(count);
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  return cells;
}

double parse_number(const std::string& cell, std::size_t line_no) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (cell.empty() || ec != std::errc() || ptr != last) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": non-numeric cell '" + cell + "'");
  }
  return value;
}

}  // namespace

Dataset load_csv_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");

  const auto header = split_csv_line(line);
  if (header.size() < 2 || header.back() != "label") {
    throw std::runtime_error(path.string() + ": header must be f0,...,f{d-1},label");
  }
  for (std::size_t j = 0; j + 1 < header.size(); ++j) {
    if (header[j] != "f" + std::to_string(j)) {
      throw std::runtime_error(path.string() + ": expected column f" + std::to_string(j) +
                               ", found '" + header[j] + "'");
    }
  }
  const std::size_t dim = header.size() - 1;

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": expected " +
                               std::to_string(header.size()) + " cells");
    }
    for (std::size_t j = 0; j < dim; ++j) values.push_back(parse_number(cells[j], line_no));
    const double label = parse_number(cells.back(), line_no);
    if (label < 0 || label != std::floor(label)) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": label must be a nonnegative integer");
    }
    labels.push_back(static_cast<int>(label));
  }
  if (labels.empty()) throw std::runtime_error(path.string() + ": no data rows");

  Dataset ds;
  ds.name = path.stem().string();
  ds.features = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(dim));
  ds.num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  ds.labels = std::move(labels);
  ds.validate();
  return ds;
}

}  // namespace fedbatch
