#pragma once

// CSV / JSON emitters and readers for run metrics, profiles, plans and sweeps.

#include <fedbatch/compress.hpp>
#include <fedbatch/fedsim.hpp>
#include <fedbatch/gradmod.hpp>
#include <fedbatch/perfmodel.hpp>

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace fedbatch {

/// Shortest round-trip decimal form; NaN prints as an empty cell, infinity as "inf".
std::string format_number(double value);

/// iter,loss,test_acc,grad_norm_sq,delta,scale_factor,bytes_comm
void write_metrics_csv(std::ostream& out, const MetricsLog& log);
/// factor,count
void write_factor_csv(std::ostream& out, const std::map<double, std::size_t>& histogram);
nlohmann::json summary_json(const RunSummary& summary);

/// b,t_c,t_mov,m_batch,reps
void write_profile_csv(std::ostream& out, std::span<const PerfSample> samples);
std::vector<PerfSample> read_profile_csv(const std::filesystem::path& path);

nlohmann::json plan_json(const Plan& plan);

/// b,ratio,rel_residual_mean,rel_residual_p50
void write_sweep_csv(std::ostream& out, std::span<const CompressionSweepRow> rows);

/// b_small,b_large,trials,mean_gamma_norm
void write_noise_csv(std::ostream& out, std::span<const NoiseEstimate> rows);

/// Writes `text` to `path`, replacing any previous content.
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace fedbatch
