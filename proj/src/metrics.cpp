#include "dysurv/metrics.hpp"

#include "json.hpp"

#include <charconv>
#include <numeric>
#include <random>

namespace dysurv {

StepFunction::StepFunction(std::vector<double> times, std::vector<double> values)
    : times_(std::move(times)), values_(std::move(values)) {
  if (times_.size() != values_.size()) throw Error(ErrorCode::shape, "step function: length mismatch");
  for (std::size_t i = 1; i < times_.size(); ++i) {
    if (!(times_[i] > times_[i - 1])) throw Error(ErrorCode::domain, "step times must increase strictly");
  }
}

double StepFunction::value(double t) const {
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return 1.0;
  return values_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

double StepFunction::left_limit(double t) const {
  const auto it = std::lower_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return 1.0;
  return values_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

StepFunction km_estimator(std::span<const double> durations, std::span<const int> indicators) {
  if (durations.empty()) throw Error(ErrorCode::domain, "Kaplan-Meier needs at least one observation");
  if (durations.size() != indicators.size()) throw Error(ErrorCode::shape, "durations and indicators differ in length");
  std::vector<std::size_t> order(durations.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return durations[a] < durations[b]; });

  std::vector<double> times, values;
  double s = 1.0;
  std::size_t at_risk = durations.size();
  for (std::size_t k = 0; k < order.size();) {
    const double t = durations[order[k]];
    std::size_t d = 0, removed = 0;
    for (; k < order.size() && durations[order[k]] == t; ++k, ++removed) d += indicators[order[k]] ? 1 : 0;
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
      times.push_back(t);
      values.push_back(s);
    }
    at_risk -= removed;
  }
  return {std::move(times), std::move(values)};
}

StepFunction censoring_km(std::span<const double> durations, std::span<const int> events) {
  std::vector<int> flipped(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) flipped[i] = events[i] ? 0 : 1;
  return km_estimator(durations, flipped);
}

GridCurves::GridCurves(TimeGrid grid, Matrix survival) : grid_(std::move(grid)), survival_(std::move(survival)) {
  if (survival_.cols() != grid_.k_bins) throw Error(ErrorCode::shape, "curve width differs from the grid's K");
}

GridCurves::GridCurves(TimeGrid grid, std::span<const RiskEstimate> estimates) : grid_(std::move(grid)) {
  survival_.resize(static_cast<Index>(estimates.size()), grid_.k_bins);
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (estimates[i].k_bins() != grid_.k_bins) throw Error(ErrorCode::shape, "estimate and grid disagree on K");
    survival_.row(static_cast<Index>(i)) = estimates[i].survival.transpose();
  }
}

namespace detail {

std::string format_time(double t) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, t);
  return {buf, res.ptr};
}

}  // namespace detail

std::vector<double> integration_knots(std::span<const double> durations, int steps) {
  if (durations.empty()) throw Error(ErrorCode::domain, "no durations to integrate over");
  if (steps < 1) throw Error(ErrorCode::domain, "integration needs at least one step");
  const double span = *std::max_element(durations.begin(), durations.end());
  if (!(span > 0.0)) throw Error(ErrorCode::domain, "test duration span must be positive");
  std::vector<double> knots(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k < steps; ++k) knots[static_cast<std::size_t>(k)] = span * k / steps;
  // Step integrands are right-continuous; sample the closing knot from inside the interval.
  knots.back() = std::nextafter(span, 0.0);
  return knots;
}

double trapezoid_mean(std::span<const double> values) {
  if (values.size() < 2) throw Error(ErrorCode::domain, "trapezoid needs two knots");
  double acc = 0.5 * (values.front() + values.back());
  for (std::size_t k = 1; k + 1 < values.size(); ++k) acc += values[k];
  return acc / static_cast<double>(values.size() - 1);
}

std::string to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["c_td"] = r.c_td;
  j["ibs"] = r.ibs;
  j["inbll"] = r.inbll;
  j["n_eval_times"] = r.n_eval_times;
  return j.dump(2);
}

std::string to_json(const HorizonReport& r) {
  nlohmann::ordered_json j;
  j["auroc"] = r.auroc;
  j["auprc"] = r.auprc;
  j["sensitivity"] = r.sensitivity;
  j["threshold"] = r.threshold;
  j["horizon"] = r.horizon;
  j["n_subjects"] = r.n_subjects;
  return j.dump(2);
}

// ---------------------------------------------------------------------------

std::vector<int> horizon_labels(std::span<const double> durations, std::span<const int> events,
                                double horizon) {
  if (durations.size() != events.size()) throw Error(ErrorCode::shape, "durations and events differ in length");
  std::vector<int> labels(durations.size());
  for (std::size_t i = 0; i < durations.size(); ++i) {
    if (events[i] && durations[i] <= horizon) labels[i] = 1;
    else if (durations[i] >= horizon) labels[i] = 0;
    else labels[i] = -1;
  }
  return labels;
}

namespace {

struct Scored {
  std::vector<double> scores;
  std::vector<int> labels;
  std::size_t positives = 0;
};

Scored keep_labelled(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::shape, "scores and labels differ in length");
  Scored s;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] < 0) continue;
    s.scores.push_back(scores[i]);
    s.labels.push_back(labels[i] ? 1 : 0);
    s.positives += labels[i] ? 1 : 0;
  }
  if (s.positives == 0 || s.positives == s.labels.size()) {
    throw Error(ErrorCode::undefined_metric, "horizon labels contain a single class");
  }
  return s;
}

// Indices sorted by decreasing score.
std::vector<std::size_t> descending(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

double auroc_impl(const Scored& s) {
  // Mann-Whitney U with average ranks for ties.
  std::vector<std::size_t> order(s.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    std::size_t e = k;
    while (e < order.size() && s.scores[order[e]] == s.scores[order[k]]) ++e;
    const double avg = 0.5 * static_cast<double>(k + 1 + e);
    for (std::size_t q = k; q < e; ++q) rank_sum += s.labels[order[q]] ? avg : 0.0;
    k = e;
  }
  const auto p = static_cast<double>(s.positives);
  const auto n = static_cast<double>(s.labels.size() - s.positives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double auprc_impl(const Scored& s) {
  const auto order = descending(s.scores);
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, taken = 0;
  for (std::size_t k = 0; k < order.size();) {
    std::size_t e = k;
    while (e < order.size() && s.scores[order[e]] == s.scores[order[k]]) {
      tp += s.labels[order[e]];
      ++e;
    }
    taken = e;
    const double recall = static_cast<double>(tp) / static_cast<double>(s.positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(taken);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    k = e;
  }
  return ap;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  return auroc_impl(keep_labelled(scores, labels));
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  return auprc_impl(keep_labelled(scores, labels));
}

HorizonReport horizon_binary_metrics(std::span<const double> risk, std::span<const int> labels,
                                     double horizon) {
  const auto s = keep_labelled(risk, labels);
  HorizonReport r;
  r.horizon = horizon;
  r.n_subjects = static_cast<Index>(s.labels.size());
  r.auroc = auroc_impl(s);
  r.auprc = auprc_impl(s);

  // Youden's J over thresholds at the observed scores (positive if >= thr).
  const auto order = descending(s.scores);
  const auto p = static_cast<double>(s.positives);
  const auto n = static_cast<double>(s.labels.size() - s.positives);
  double best_j = -2.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double thr = s.scores[order[k]];
    while (k < order.size() && s.scores[order[k]] == thr) {
      if (s.labels[order[k]]) ++tp;
      else ++fp;
      ++k;
    }
    const double tpr = static_cast<double>(tp) / p;
    const double j = tpr - static_cast<double>(fp) / n;
    if (j > best_j) {
      best_j = j;
      r.sensitivity = tpr;
      r.threshold = thr;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

std::vector<FeatureImportance> permutation_importance(const DySurvParams& params,
                                                      const ModelData& test, const TimeGrid& grid,
                                                      std::span<const FeatureGroup> groups,
                                                      int n_repeats, std::uint64_t seed) {
  if (n_repeats < 1) throw Error(ErrorCode::domain, "n_repeats must be at least 1");
  const auto c_td_of = [&](const ModelData& d) {
    const auto est = predict_risk(params, d);
    return concordance_td(GridCurves(grid, est), d.durations, d.events);
  };
  const double base = c_td_of(test);
  std::mt19937_64 rng(seed);
  const Index n = test.size();
  std::vector<FeatureImportance> out;
  for (const auto& g : groups) {
    FeatureImportance fi;
    fi.name = g.name;
    for (int r = 0; r < n_repeats; ++r) {
      std::vector<Index> perm(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), Index{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      ModelData shuffled = test;
      for (std::size_t t = 0; t < test.steps.size(); ++t) {
        for (Index row : g.rows) {
          for (Index i = 0; i < n; ++i) shuffled.steps[t](row, i) = test.steps[t](row, perm[static_cast<std::size_t>(i)]);
        }
      }
      fi.drops.push_back(base - c_td_of(shuffled));
    }
    fi.mean_drop = std::accumulate(fi.drops.begin(), fi.drops.end(), 0.0) / n_repeats;
    out.push_back(std::move(fi));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const FeatureImportance& a, const FeatureImportance& b) { return a.mean_drop > b.mean_drop; });
  return out;
}

}  // namespace dysurv
