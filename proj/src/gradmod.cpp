#include <fedbatch/gradmod.hpp>

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedbatch {

void StepPolicy::validate() const {
  if (!(X >= 1.0) || !std::isfinite(X)) throw std::invalid_argument("step policy: X must be finite and >= 1");
  if (!(threshold > 0.0)) throw std::invalid_argument("step policy: threshold must be positive");
  if (warmup_iters < 0) throw std::invalid_argument("step policy: warmup_iters must be >= 0");
}

double grad_change(double prev_sq, double cur_sq) {
  if (prev_sq < 0.0 || cur_sq < 0.0) {
    throw std::invalid_argument("grad_change: squared norms must be nonnegative");
  }
  if (prev_sq == 0.0) return kCriticalSentinel;
  return std::abs((cur_sq - prev_sq) / prev_sq);
}

double select_factor(double delta, const StepPolicy& policy) {
  if (std::isnan(delta) || std::isinf(delta)) return 1.0;
  const bool above = delta >= policy.threshold;
  return above != policy.invert_branches ? policy.X : 1.0;
}

GradientVector scale_gradient(const GradientVector& grad, double factor) {
  if (!std::isfinite(factor)) throw std::invalid_argument("scale_gradient: non-finite factor");
  if (factor == 1.0) return grad;
  return factor * grad;
}

double NormTracker::observe(double squared_norm) {
  if (squared_norm < 0.0) throw std::invalid_argument("NormTracker: negative squared norm");
  const double delta = previous_ ? grad_change(*previous_, squared_norm)
                                 : std::numeric_limits<double>::quiet_NaN();
  previous_ = squared_norm;
  const double before = cumulative_.empty() ? 0.0 : cumulative_.back();
  cumulative_.push_back(before + std::sqrt(squared_norm));
  return delta;
}

GradientVector FunctionMapper::map(const GradientVector& grad) {
  GradientVector out = fn_(grad);
  if (out.size() != grad.size()) throw std::logic_error("mapper changed the gradient length");
  return out;
}

StepMapper::StepMapper(StepPolicy policy, NormTracker tracker)
    : policy_(policy), tracker_(std::move(tracker)) {
  policy_.validate();
}

GradientVector StepMapper::map(const GradientVector& grad) {
  const auto call = decisions_.size();
  const double squared = grad.squaredNorm();
  const double delta = tracker_.observe(squared);
  const bool warming_up = call < static_cast<std::size_t>(policy_.warmup_iters);
  const double factor = warming_up ? 1.0 : select_factor(delta, policy_);
  decisions_.push_back({squared, delta, factor});
  return scale_gradient(grad, factor);
}

std::unique_ptr<StepMapper> step_mapper(const StepPolicy& policy, NormTracker tracker) {
  return std::make_unique<StepMapper>(policy, std::move(tracker));
}

NoiseEstimate estimate_gamma(const ModelSpec& spec, const ParamVector& params,
                             const Dataset& ds, int b_small, int b_large, int trials,
                             std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(ds.size());
  if (b_small <= 0 || b_small > b_large) {
    throw std::invalid_argument("estimate_gamma: need 0 < b_small <= b_large");
  }
  if (static_cast<std::size_t>(b_large) > n) {
    throw std::invalid_argument("estimate_gamma: batch larger than dataset");
  }
  if (trials < 1) throw std::invalid_argument("estimate_gamma: trials must be >= 1");

  NoiseEstimate est;
  est.b_small = b_small;
  est.b_large = b_large;
  est.trials = trials;
  Workspace<double> ws;
  for (int t = 0; t < trials; ++t) {
    const auto small_rows = sample_rows(n, static_cast<std::size_t>(b_small), derive_seed(seed, 2 * t));
    const auto large_rows = sample_rows(n, static_cast<std::size_t>(b_large), derive_seed(seed, 2 * t + 1));
    const GradientVector g_small = backward(spec, params, gather_batch(ds, small_rows), ws).grad;
    const GradientVector g_large = backward(spec, params, gather_batch(ds, large_rows), ws).grad;
    est.gamma_norms.push_back((g_small - g_large).norm());
  }
  est.mean_gamma_norm = std::accumulate(est.gamma_norms.begin(), est.gamma_norms.end(), 0.0) /
                        static_cast<double>(trials);
  return est;
}

std::map<double, std::size_t> factor_histogram(std::span<const double> factors) {
  if (factors.empty()) throw std::invalid_argument("factor_histogram: empty log");
  std::map<double, std::size_t> counts;
  for (double f : factors) ++counts[f];
  return counts;
}

std::vector<double> cumulative_norms(std::span<const double> squared_norms) {
  std::vector<double> out;
  out.reserve(squared_norms.size());
  double total = 0.0;
  for (double sq : squared_norms) {
    total += std::sqrt(sq);
    out.push_back(total);
  }
  return out;
}

}  // namespace fedbatch
