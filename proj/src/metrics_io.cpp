#include <fedbatch/metrics_io.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fedbatch {

std::string format_number(double value) {
  if (std::isnan(value)) return "";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw std::runtime_error("format_number: conversion failed");
  return {buf, ptr};
}

void write_metrics_csv(std::ostream& out, const MetricsLog& log) {
  out << "iter,loss,test_acc,grad_norm_sq,delta,scale_factor,bytes_comm\n";
  for (const auto& r : log.records) {
    out << r.iter << ',' << format_number(r.loss) << ',' << format_number(r.test_acc) << ','
        << format_number(r.grad_norm_sq) << ',' << format_number(r.delta) << ','
        << format_number(r.scale_factor) << ',' << r.bytes_comm << '\n';
  }
}

void write_factor_csv(std::ostream& out, const std::map<double, std::size_t>& histogram) {
  out << "factor,count\n";
  for (const auto& [factor, count] : histogram) out << format_number(factor) << ',' << count << '\n';
}

nlohmann::json summary_json(const RunSummary& s) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& [factor, count] : s.factor_histogram) {
    hist.push_back({{"factor", factor}, {"count", count}});
  }
  return {
      {"tag", s.tag},
      {"seed", s.seed},
      {"iterations", s.iterations},
      {"H", s.H},
      {"num_clients", s.num_clients},
      {"global_batch", s.global_batch},
      {"final_test_acc", s.final_test_acc},
      {"final_loss", s.final_loss},
      {"total_bytes_comm", s.total_bytes_comm},
      {"simulated_time", s.simulated_time},
      {"factor_histogram", hist},
      {"notes", s.notes},
  };
}

void write_profile_csv(std::ostream& out, std::span<const PerfSample> samples) {
  out << "b,t_c,t_mov,m_batch,reps\n";
  for (const auto& s : samples) {
    out << s.batch_size << ',' << format_number(s.t_c) << ',' << format_number(s.t_mov) << ','
        << format_number(s.m_batch) << ',' << s.reps << '\n';
  }
}

namespace {

double to_double(const std::string& cell, std::size_t line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw std::runtime_error("profile line " + std::to_string(line_no) + ": bad number '" + cell + "'");
  }
  return v;
}

}  // namespace

std::vector<PerfSample> read_profile_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "b,t_c,t_mov,m_batch,reps") {
    throw std::runtime_error(path.string() + ": expected header b,t_c,t_mov,m_batch,reps");
  }
  std::vector<PerfSample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) {
      throw std::runtime_error("profile line " + std::to_string(line_no) + ": expected 5 cells");
    }
    PerfSample s;
    s.batch_size = static_cast<int>(to_double(cells[0], line_no));
    s.t_c = to_double(cells[1], line_no);
    s.t_mov = to_double(cells[2], line_no);
    s.m_batch = to_double(cells[3], line_no);
    s.reps = static_cast<int>(to_double(cells[4], line_no));
    if (s.batch_size < 1 || s.t_c < 0 || s.t_mov < 0 || s.m_batch < 0) {
      throw std::runtime_error("profile line " + std::to_string(line_no) + ": negative entry");
    }
    out.push_back(s);
  }
  return out;
}

nlohmann::json plan_json(const Plan& plan) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& row : plan.table) {
    table.push_back({{"b", row.batch_size},
                     {"feasible", row.feasible},
                     {"total_memory", row.total_memory},
                     {"iterations", row.epoch.iterations},
                     {"epoch_time", row.epoch.seconds}});
  }
  nlohmann::json j;
  j["feasible"] = plan.b_opt.has_value();
  j["b_max"] = plan.b_max ? nlohmann::json(*plan.b_max) : nlohmann::json(nullptr);
  j["b_opt"] = plan.b_opt ? nlohmann::json(*plan.b_opt) : nlohmann::json(nullptr);
  j["epoch_time_table"] = table;
  if (plan.clamped) j["warnings"] = {"some fitted predictions were clamped at zero"};
  return j;
}

void write_sweep_csv(std::ostream& out, std::span<const CompressionSweepRow> rows) {
  out << "b,ratio,rel_residual_mean,rel_residual_p50\n";
  for (const auto& r : rows) {
    out << r.batch_size << ',' << format_number(r.ratio) << ',' << format_number(r.rel_residual_mean)
        << ',' << format_number(r.rel_residual_p50) << '\n';
  }
}

void write_noise_csv(std::ostream& out, std::span<const NoiseEstimate> rows) {
  out << "b_small,b_large,trials,mean_gamma_norm\n";
  for (const auto& r : rows) {
    out << r.b_small << ',' << r.b_large << ',' << r.trials << ',' << format_number(r.mean_gamma_norm)
        << '\n';
  }
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace fedbatch
