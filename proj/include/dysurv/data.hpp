#pragma once

#include "dysurv/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dysurv {

enum class ColumnKind { numeric, categorical };

struct StaticColumn {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  /// Sorted category labels; each becomes one one-hot column.
  std::vector<std::string> categories;
};

/// Rows of the model input that belong to one original feature. A categorical
/// column owns its whole one-hot block.
struct FeatureGroup {
  std::string name;
  std::vector<Index> rows;
};

struct FeatureSchema {
  std::vector<StaticColumn> static_columns;
  std::vector<std::string> series_features;
  std::string id_col = "id";
  std::string duration_col = "duration";
  std::string event_col = "event";

  /// Width S of the encoded static vector (numeric + one-hot columns).
  Index static_width() const;
  Index series_width() const { return static_cast<Index>(series_features.size()); }
  std::vector<std::string> encoded_static_names() const;
  /// Per encoded static column: true for numeric, false for one-hot indicators.
  std::vector<bool> numeric_static_columns() const;
  std::vector<FeatureGroup> feature_groups() const;
  std::uint64_t hash() const;
  /// Throws E_SCHEMA on duplicate roles or categorical cardinality < 2.
  void validate() const;
};

struct SubjectRecord {
  std::string id;
  Vector static_features;
  /// J x M time-varying values; cells where `observed` is false are undefined
  /// until fill_missing.
  Matrix series;
  Mask observed;
  double duration = 0.0;
  bool event = false;
  /// Time of the subject's last series measurement in duration units.
  std::optional<double> window_end;
};

struct SurvivalDataset {
  FeatureSchema schema;
  /// Common series timestamps (length J); empty for static-only data.
  std::vector<double> timestamps;
  std::vector<SubjectRecord> records;

  std::size_t size() const { return records.size(); }
  std::size_t event_count() const;
  /// J; 1 for static-only data.
  Index seq_len() const;
  std::vector<double> durations() const;
  std::vector<int> events() const;
  /// Throws E_SCHEMA when a record does not conform to the schema or when no
  /// record has an observed event.
  void validate(bool require_event = true) const;
};

/// Contents of the dataset manifest JSON.
struct Manifest {
  std::filesystem::path static_csv;
  std::optional<std::filesystem::path> series_csv;
  std::string id_col = "id";
  std::string duration_col = "duration";
  std::string event_col = "event";
  std::vector<std::string> categorical_cols;
  std::string time_col = "time";
  std::string feature_col = "feature";
  std::string value_col = "value";
  /// Multiplier converting series timestamps into duration units.
  double time_scale = 1.0;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

SurvivalDataset load_csv(const std::filesystem::path& manifest_path);

/// Loads with a fixed reference schema (column roles and category lists), as
/// needed when encoding new data for an already trained model.
SurvivalDataset load_csv(const Manifest& manifest,
                         const FeatureSchema* reference = nullptr);

/// Writes static.csv, series.csv (when M > 0) and manifest.json into `dir`.
void save_csv(const SurvivalDataset& ds, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Synthetic data with a known discrete logistic hazard.

struct SyntheticTruth {
  int periods = 10;
  /// Per-feature hazard weights; the last feature always gets weight zero
  /// when m > 1.
  Vector weights;
  /// Per-period intercepts of the logistic hazard.
  Vector baseline_logits;
  /// Upper bound of the uniform censoring distribution.
  double censor_upper = 0.0;
  /// n x (periods + 1) true event probabilities, row i for records[i]; the
  /// final column is the probability of surviving past the horizon.
  Matrix event_probabilities;
};

struct SyntheticDataset {
  SurvivalDataset data;
  SyntheticTruth truth;
};

SyntheticDataset generate_synthetic(std::size_t n, Index m_features,
                                    double censor_frac, std::uint64_t seed);

/// True per-period event probabilities (length periods + 1) for raw
/// covariates `x`.
Vector true_event_probabilities(const SyntheticTruth& truth,
                                const Eigen::Ref<const Vector>& x);

// ---------------------------------------------------------------------------
// Splitting and preprocessing.

struct DatasetSplit {
  SurvivalDataset train;
  SurvivalDataset val;
  SurvivalDataset test;
  bool stratified = true;
  std::string warning;
};

/// 60/20/20 split, stratified by event indicator.
DatasetSplit split_dataset(const SurvivalDataset& ds, std::uint64_t seed);

/// Piecewise-linear map from reference quantiles to standard-normal targets.
struct QuantileMap {
  Vector references;
  Vector targets;

  bool passthrough() const { return references.size() == 0; }
  double operator()(double x) const;
};

struct QuantileTransform {
  std::vector<QuantileMap> static_maps;  // per encoded static column
  std::vector<QuantileMap> series_maps;  // per time-varying feature
};

QuantileTransform fit_quantile_transform(const SurvivalDataset& train);
SurvivalDataset apply_quantile_transform(const QuantileTransform& qt,
                                         const SurvivalDataset& ds);

/// Forward fill, then backward fill of a leading gap; fully missing columns
/// become 0 (the standardized training mean).
SubjectRecord fill_missing(const SubjectRecord& record);

/// J x (S + M): static vector copied onto every timestamp, then the series.
Matrix replicate_static(const SubjectRecord& record);

struct TimeGrid {
  int k_bins = 10;
  double t_max = 1.0;
  Vector boundaries;  // k_bins + 1 values, boundaries[0] = 0
};

TimeGrid make_time_grid(int k_bins, double t_max);
TimeGrid build_time_grid(std::span<const double> train_durations, int k = 10);
/// floor(k * duration / t_max), clipped to [0, k - 1].
int discretize(const TimeGrid& grid, double duration);

/// Sentinel for an empty conditioning window.
inline constexpr int kNoWindow = -1;

/// Last bin fully elapsed by the end of the observation window, or kNoWindow.
int window_bin(const TimeGrid& grid, std::optional<double> window_end,
               double duration);

}  // namespace dysurv
