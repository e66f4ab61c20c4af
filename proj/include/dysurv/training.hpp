#pragma once

#include "dysurv/metrics.hpp"
#include "dysurv/model.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace dysurv {

struct TrainConfig {
  double learning_rate = 1e-3;
  Index batch_size = 256;
  double alpha = 0.5;
  double dropout_keep = 0.9;
  int max_epochs = 200;
  int patience = 10;
  std::uint64_t seed = 0;
  LatentMode latent = LatentMode::stochastic;
  /// Gradient-norm clipping threshold; 0 disables it.
  double clip_norm = 0.0;
  ModelConfig model;

  /// Throws E_DOMAIN on an out-of-range field.
  void validate() const;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(const ad::ParamStore& params);
};

/// One bias-corrected Adam update. Throws E_NUMERICAL on a non-finite
/// gradient, naming the parameter.
void adam_step(AdamState& state, ad::ParamStore& params, const ad::Gradients& grads, double lr);

/// Scales `grads` in place so that its norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_gradients(ad::Gradients& grads, double max_norm);

class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);

  /// Records one epoch; returns true when it is the new best.
  bool update(double val_loss);
  bool should_stop() const { return since_best_ >= patience_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  int epoch = 0;
  double train_l1 = 0.0;
  double train_l2 = 0.0;
  double train_total = 0.0;
  double val_l1 = 0.0;
  double val_l2 = 0.0;
  double val_nll = 0.0;
  double val_total = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_total = std::numeric_limits<double>::infinity();

  const EpochRecord& best() const;
  /// Columns epoch, train_l1, train_l2, train_total, val_total.
  void write_csv(const std::filesystem::path& path) const;
};

struct FitResult {
  DySurvParams params;
  TrainHistory history;
};

struct LossSummary {
  double l1 = 0.0;   // NLL summed over subjects
  double l2 = 0.0;   // reconstruction + KL, per subject
  double total = 0.0;
  double nll = 0.0;  // l1 per subject
};

/// Deterministic (validate-phase) losses with the whole dataset treated as
/// one batch.
LossSummary evaluate_loss(const DySurvParams& params, const ModelData& data);

FitResult fit(const ModelData& train, const ModelData& val, int k_bins, const TrainConfig& config);

// ---------------------------------------------------------------------------

struct GridSearchSpace {
  std::vector<double> learning_rates{1e-2, 1e-3, 1e-4};
  std::vector<Index> batch_sizes{64, 256};
  std::vector<double> alphas{0.2, 0.5, 0.8};
  std::vector<double> dropout_keeps{0.7, 0.9};

  std::size_t size() const;
  /// Throws E_DOMAIN on an empty axis.
  void validate() const;
  /// Cartesian product in lr, batch, alpha, keep order over `base`.
  std::vector<TrainConfig> expand(const TrainConfig& base) const;
};

/// Parses "lr=1e-3,1e-4;batch=64;alpha=0.5;keep=0.9"; missing axes keep
/// their defaults.
GridSearchSpace parse_grid(const std::string& text);

struct TrialResult {
  TrainConfig config;
  double best_val_total = std::numeric_limits<double>::quiet_NaN();
  double best_val_nll = std::numeric_limits<double>::quiet_NaN();
  int best_epoch = 0;
  int epochs_run = 0;
  std::string error;  // empty when the trial completed

  bool ok() const { return error.empty(); }
};

struct GridSearchResult {
  TrainConfig best;
  FitResult best_fit;
  /// Completed trials by increasing validation loss, then failed ones.
  std::vector<TrialResult> leaderboard;

  std::string leaderboard_json() const;
};

/// Throws E_SEARCH_FAILURE listing per-trial errors when no trial completes.
GridSearchResult grid_search(const ModelData& train, const ModelData& val, int k_bins,
                             const GridSearchSpace& space, const TrainConfig& base);

// ---------------------------------------------------------------------------

struct SeedRun {
  std::uint64_t seed = 0;
  EvalReport report;
  double val_nll = 0.0;
  int best_epoch = 0;
  std::string error;
};

struct MultiSeedReport {
  std::vector<SeedRun> runs;
  EvalReport mean;
  double mean_val_nll = 0.0;
  bool incomplete = false;

  std::string to_json() const;
};

MultiSeedReport multi_seed_report(const ModelData& train, const ModelData& val,
                                  const ModelData& test, const TimeGrid& grid,
                                  const TrainConfig& config, std::span<const std::uint64_t> seeds);

}  // namespace dysurv
