#pragma once

// Gradient-norm tracking, the relative gradient-change metric, the
// step-function gradient scaler and small/large batch gradient noise.

#include <fedbatch/datagen.hpp>
#include <fedbatch/nncore.hpp>

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <vector>

namespace fedbatch {

/// Returned by grad_change when the previous squared norm is zero.
inline constexpr double kCriticalSentinel = std::numeric_limits<double>::infinity();

struct StepPolicy {
  double X = 1.0;          // step-up factor, >= 1
  double threshold = 0.5;  // tau
  int warmup_iters = 1;    // first calls forced to 1x (delta is still logged)
  bool invert_branches = false;  // alternative reading: delta >= tau -> 1x

  bool is_noop() const { return X == 1.0; }
  void validate() const;
};

/// |(cur - prev) / prev|; kCriticalSentinel when prev == 0.
double grad_change(double prev_sq, double cur_sq);

/// X when delta >= threshold, 1.0 otherwise (branches swapped when
/// invert_branches is set). NaN and the sentinel always give 1.0.
double select_factor(double delta, const StepPolicy& policy);

/// factor * grad. factor == 1 returns a bit-identical copy.
GradientVector scale_gradient(const GradientVector& grad, double factor);

/// Remembers the previous squared gradient norm and the running
/// (cumulative) sum of gradient norms.
class NormTracker {
 public:
  /// Records |G_i|^2 and returns delta for this call; NaN on the first call.
  double observe(double squared_norm);

  std::optional<double> previous() const { return previous_; }
  const std::vector<double>& cumulative() const { return cumulative_; }
  std::size_t count() const { return cumulative_.size(); }

 private:
  std::optional<double> previous_;
  std::vector<double> cumulative_;
};

/// Maps a (large-batch) gradient to the gradient actually applied.
class TeacherMapper {
 public:
  virtual ~TeacherMapper() = default;
  virtual GradientVector map(const GradientVector& grad) = 0;
};

class IdentityMapper final : public TeacherMapper {
 public:
  GradientVector map(const GradientVector& grad) override { return grad; }
};

/// Adapts any callable, e.g. a learned gradient mapper.
class FunctionMapper final : public TeacherMapper {
 public:
  explicit FunctionMapper(std::function<GradientVector(const GradientVector&)> fn)
      : fn_(std::move(fn)) {}
  GradientVector map(const GradientVector& grad) override;

 private:
  std::function<GradientVector(const GradientVector&)> fn_;
};

struct StepDecision {
  double squared_norm;
  double delta;  // NaN until a predecessor norm exists
  double factor;
};

/// Step-function mapper: tracks |G|^2, evaluates the gradient-change metric,
/// and scales by X or 1 accordingly. One instance per client per run.
class StepMapper final : public TeacherMapper {
 public:
  explicit StepMapper(StepPolicy policy, NormTracker tracker = {});

  GradientVector map(const GradientVector& grad) override;

  const StepPolicy& policy() const { return policy_; }
  const NormTracker& tracker() const { return tracker_; }
  const std::vector<StepDecision>& decisions() const { return decisions_; }
  const StepDecision& last() const { return decisions_.back(); }

 private:
  StepPolicy policy_;
  NormTracker tracker_;
  std::vector<StepDecision> decisions_;
};

std::unique_ptr<StepMapper> step_mapper(const StepPolicy& policy, NormTracker tracker = {});

struct NoiseEstimate {
  int b_small = 0;
  int b_large = 0;
  int trials = 0;
  std::vector<double> gamma_norms;
  double mean_gamma_norm = 0.0;
};

/// gamma_t = G(b_small) - G(b_large) on independent seeded draws from `ds`.
NoiseEstimate estimate_gamma(const ModelSpec& spec, const ParamVector& params,
                             const Dataset& ds, int b_small, int b_large, int trials,
                             std::uint64_t seed);

/// Iteration counts per distinct scale factor, ascending by factor.
std::map<double, std::size_t> factor_histogram(std::span<const double> factors);

/// Running sum of sqrt(squared norms).
std::vector<double> cumulative_norms(std::span<const double> squared_norms);

}  // namespace fedbatch
