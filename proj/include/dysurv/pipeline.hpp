#pragma once

// Glue from raw datasets to model inputs: fitted preprocessing state and the
// split/transform/discretize sequence shared by the CLI and the tests.

#include "dysurv/data.hpp"
#include "dysurv/model.hpp"

#include <cstdint>
#include <vector>

namespace dysurv {

/// Everything fitted on the training split that new data must reuse.
struct Preprocessor {
  FeatureSchema schema;
  std::vector<double> timestamps;
  QuantileTransform transform;
  TimeGrid grid;
};

Preprocessor fit_preprocessor(const SurvivalDataset& train, int k_bins = 10);

/// Re-indexes series rows onto the reference timestamps. Throws E_SCHEMA on a
/// timestamp the reference does not know.
SurvivalDataset align_timestamps(const SurvivalDataset& ds, const std::vector<double>& timestamps);

/// Quantile transform followed by missing-value filling.
SurvivalDataset preprocess(const Preprocessor& pre, const SurvivalDataset& ds);

ModelData prepare_model_data(const Preprocessor& pre, const SurvivalDataset& ds);

struct PreparedSplits {
  DatasetSplit raw;
  Preprocessor pre;
  ModelData train;
  ModelData val;
  ModelData test;
};

PreparedSplits prepare_splits(const SurvivalDataset& ds, std::uint64_t split_seed, int k_bins = 10);

}  // namespace dysurv
