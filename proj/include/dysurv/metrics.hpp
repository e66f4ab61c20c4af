#pragma once

// Censoring-aware evaluation. Survival predictions are passed as any object
// `q` with q.size() subjects and q(i, t) = S_i(t).

#include "dysurv/error.hpp"
#include "dysurv/model.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dysurv {

template <class Q>
concept SurvivalQuery = requires(const Q& q, Index i, double t) {
  { q(i, t) } -> std::convertible_to<double>;
  { q.size() } -> std::convertible_to<Index>;
};

/// Right-continuous step function starting at 1.
class StepFunction {
 public:
  StepFunction() = default;
  StepFunction(std::vector<double> times, std::vector<double> values);

  double value(double t) const;
  /// Limit from the left, f(t-).
  double left_limit(double t) const;

  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> times_;
  std::vector<double> values_;
};

/// Product-limit estimate; `indicators` mark the observations that count as
/// events for this curve. Throws E_DOMAIN on empty input.
StepFunction km_estimator(std::span<const double> durations, std::span<const int> indicators);

/// Kaplan-Meier estimate of the censoring distribution.
StepFunction censoring_km(std::span<const double> durations, std::span<const int> events);

/// Model curves on a time grid: S(0) = 1, linear between bin boundaries and
/// flat after t_max.
class GridCurves {
 public:
  GridCurves(TimeGrid grid, Matrix survival);  // survival: N x K
  GridCurves(TimeGrid grid, std::span<const RiskEstimate> estimates);

  Index size() const { return survival_.rows(); }
  double operator()(Index i, double t) const {
    if (t <= 0.0) return 1.0;
    const int k = grid_.k_bins;
    if (t >= grid_.t_max) return survival_(i, k - 1);
    const double u = k * t / grid_.t_max;
    const int b = std::min(k - 1, static_cast<int>(u));
    const double w = (t - grid_.boundaries[b]) / (grid_.boundaries[b + 1] - grid_.boundaries[b]);
    const double left = b == 0 ? 1.0 : survival_(i, b - 1);
    return w == 0.0 ? left : left + w * (survival_(i, b) - left);
  }
  const TimeGrid& grid() const { return grid_; }
  const Matrix& survival() const { return survival_; }

 private:
  TimeGrid grid_;
  Matrix survival_;
};

namespace detail {

inline void check_lengths(Index n, std::span<const double> durations, std::span<const int> events) {
  if (static_cast<Index>(durations.size()) != n || static_cast<Index>(events.size()) != n) {
    throw Error(ErrorCode::shape, "predictions, durations and events differ in length");
  }
}

std::string format_time(double t);

}  // namespace detail

/// Antolini's time-dependent concordance. Tied predictions count 0.5; pairs
/// with equal times count when i is an event and j is censored.
template <SurvivalQuery Q>
double concordance_td(const Q& surv, std::span<const double> durations,
                      std::span<const int> events) {
  const Index n = surv.size();
  detail::check_lengths(n, durations, events);
  std::int64_t pairs = 0;
  std::int64_t score = 0;  // 2 per concordant pair, 1 per tie
  for (Index i = 0; i < n; ++i) {
    if (!events[i]) continue;
    const double ti = durations[i];
    const double si = surv(i, ti);
    for (Index j = 0; j < n; ++j) {
      const double tj = durations[j];
      if (!(ti < tj || (ti == tj && !events[j]))) continue;
      const double sj = surv(j, ti);
      ++pairs;
      if (si < sj) score += 2;
      else if (si == sj) score += 1;
    }
  }
  if (pairs == 0) throw Error(ErrorCode::undefined_metric, "no comparable pairs for c_td");
  return static_cast<double>(score) / (2.0 * static_cast<double>(pairs));
}

/// IPCW Brier score at time t.
template <SurvivalQuery Q>
double brier_ipcw(const Q& surv, std::span<const double> durations, std::span<const int> events,
                  double t, const StepFunction& g) {
  const Index n = surv.size();
  detail::check_lengths(n, durations, events);
  const double g_t = g.value(t);
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double ti = durations[i];
    if (ti <= t && events[i]) {
      const double w = g.left_limit(ti);
      if (!(w > 0.0)) {
        throw Error(ErrorCode::weight_degeneracy, "zero censoring weight at t=" + detail::format_time(t));
      }
      const double s = surv(i, t);
      acc += s * s / w;
    } else if (ti > t) {
      if (!(g_t > 0.0)) {
        throw Error(ErrorCode::weight_degeneracy, "zero censoring weight at t=" + detail::format_time(t));
      }
      const double s = surv(i, t);
      acc += (1.0 - s) * (1.0 - s) / g_t;
    }
  }
  return acc / static_cast<double>(n);
}

/// IPCW negative binomial log-likelihood at time t (lower is better).
template <SurvivalQuery Q>
double binomial_ll(const Q& surv, std::span<const double> durations, std::span<const int> events,
                   double t, const StepFunction& g) {
  const Index n = surv.size();
  detail::check_lengths(n, durations, events);
  constexpr double lo = 1e-12;
  const double g_t = g.value(t);
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double ti = durations[i];
    if (ti <= t && events[i]) {
      const double w = g.left_limit(ti);
      if (!(w > 0.0)) {
        throw Error(ErrorCode::weight_degeneracy, "zero censoring weight at t=" + detail::format_time(t));
      }
      const double s = std::clamp(surv(i, t), lo, 1.0 - lo);
      acc += std::log(1.0 - s) / w;
    } else if (ti > t) {
      if (!(g_t > 0.0)) {
        throw Error(ErrorCode::weight_degeneracy, "zero censoring weight at t=" + detail::format_time(t));
      }
      const double s = std::clamp(surv(i, t), lo, 1.0 - lo);
      acc += std::log(s) / g_t;
    }
  }
  return -acc / static_cast<double>(n);
}

inline constexpr int kIntegrationSteps = 100;

/// Evaluation knots k * span / steps for k = 0..steps; the last is the left limit at span.
std::vector<double> integration_knots(std::span<const double> durations,
                                      int steps = kIntegrationSteps);

/// Trapezoidal rule over equally spaced knots, divided by the span.
double trapezoid_mean(std::span<const double> values);

template <SurvivalQuery Q>
double integrated_brier(const Q& surv, std::span<const double> durations,
                        std::span<const int> events, int steps = kIntegrationSteps) {
  const auto g = censoring_km(durations, events);
  std::vector<double> vals;
  for (double t : integration_knots(durations, steps)) vals.push_back(brier_ipcw(surv, durations, events, t, g));
  return trapezoid_mean(vals);
}

template <SurvivalQuery Q>
double integrated_nbll(const Q& surv, std::span<const double> durations,
                       std::span<const int> events, int steps = kIntegrationSteps) {
  const auto g = censoring_km(durations, events);
  std::vector<double> vals;
  for (double t : integration_knots(durations, steps)) vals.push_back(binomial_ll(surv, durations, events, t, g));
  return trapezoid_mean(vals);
}

struct EvalReport {
  double c_td = 0.0;
  double ibs = 0.0;
  double inbll = 0.0;
  int n_eval_times = kIntegrationSteps;
};

template <SurvivalQuery Q>
EvalReport evaluate(const Q& surv, std::span<const double> durations, std::span<const int> events) {
  EvalReport r;
  r.c_td = concordance_td(surv, durations, events);
  r.ibs = integrated_brier(surv, durations, events);
  r.inbll = integrated_nbll(surv, durations, events);
  return r;
}

/// Pretty-printed JSON with keys c_td, ibs, inbll, n_eval_times.
std::string to_json(const EvalReport& r);

// ---------------------------------------------------------------------------
// Fixed-horizon classification.

struct HorizonReport {
  double auroc = 0.0;
  double auprc = 0.0;
  double sensitivity = 0.0;
  double threshold = 0.0;
  double horizon = 0.0;
  Index n_subjects = 0;
};

/// Label 1 for an observed event at or before h, 0 for follow-up beyond h;
/// -1 (excluded) for censoring before h.
std::vector<int> horizon_labels(std::span<const double> durations, std::span<const int> events,
                                double horizon);

double auroc(std::span<const double> scores, std::span<const int> labels);
double auprc(std::span<const double> scores, std::span<const int> labels);

/// Keys auroc, auprc, sensitivity, threshold, horizon, n_subjects.
std::string to_json(const HorizonReport& r);

/// `risk` is F(h) per subject; labels of -1 are skipped. Throws
/// E_UNDEFINED_METRIC when the remaining labels hold a single class.
HorizonReport horizon_binary_metrics(std::span<const double> risk, std::span<const int> labels,
                                     double horizon);

// ---------------------------------------------------------------------------
// Permutation importance.

struct FeatureImportance {
  std::string name;
  double mean_drop = 0.0;
  std::vector<double> drops;
};

/// Mean c_td drop when the rows of each feature group are shuffled across
/// subjects (whole trajectories move together). Sorted by decreasing drop.
std::vector<FeatureImportance> permutation_importance(const DySurvParams& params,
                                                      const ModelData& test, const TimeGrid& grid,
                                                      std::span<const FeatureGroup> groups,
                                                      int n_repeats, std::uint64_t seed);

}  // namespace dysurv
