#include "dysurv/pipeline.hpp"

#include "dysurv/csv.hpp"
#include "dysurv/error.hpp"

#include <algorithm>

namespace dysurv {

Preprocessor fit_preprocessor(const SurvivalDataset& train, int k_bins) {
  Preprocessor pre;
  pre.schema = train.schema;
  pre.timestamps = train.timestamps;
  pre.transform = fit_quantile_transform(train);
  pre.grid = build_time_grid(train.durations(), k_bins);
  return pre;
}

SurvivalDataset align_timestamps(const SurvivalDataset& ds, const std::vector<double>& timestamps) {
  if (ds.timestamps == timestamps) return ds;
  if (timestamps.empty() || ds.timestamps.empty()) {
    throw Error(ErrorCode::schema, "series timestamps are present in only one of the datasets");
  }
  std::vector<Index> pos;
  for (double t : ds.timestamps) {
    const auto it = std::lower_bound(timestamps.begin(), timestamps.end(), t);
    if (it == timestamps.end() || *it != t) {
      throw Error(ErrorCode::schema, "series timestamp " + csv::format(t) + " is unknown to the model");
    }
    pos.push_back(static_cast<Index>(it - timestamps.begin()));
  }
  SurvivalDataset out = ds;
  out.timestamps = timestamps;
  const auto j = static_cast<Index>(timestamps.size());
  for (auto& r : out.records) {
    Matrix series = Matrix::Zero(j, r.series.cols());
    Mask observed = Mask::Constant(j, r.series.cols(), false);
    for (Index t = 0; t < r.series.rows(); ++t) {
      series.row(pos[static_cast<std::size_t>(t)]) = r.series.row(t);
      observed.row(pos[static_cast<std::size_t>(t)]) = r.observed.row(t);
    }
    r.series = std::move(series);
    r.observed = std::move(observed);
  }
  return out;
}

SurvivalDataset preprocess(const Preprocessor& pre, const SurvivalDataset& ds) {
  if (ds.schema.hash() != pre.schema.hash()) {
    throw Error(ErrorCode::incompatible, "dataset schema differs from the fitted schema");
  }
  SurvivalDataset out = apply_quantile_transform(pre.transform, align_timestamps(ds, pre.timestamps));
  for (auto& r : out.records) r = fill_missing(r);
  return out;
}

ModelData prepare_model_data(const Preprocessor& pre, const SurvivalDataset& ds) {
  return to_model_data(preprocess(pre, ds), pre.grid);
}

PreparedSplits prepare_splits(const SurvivalDataset& ds, std::uint64_t split_seed, int k_bins) {
  PreparedSplits p;
  p.raw = split_dataset(ds, split_seed);
  p.pre = fit_preprocessor(p.raw.train, k_bins);
  p.train = prepare_model_data(p.pre, p.raw.train);
  p.val = prepare_model_data(p.pre, p.raw.val);
  p.test = prepare_model_data(p.pre, p.raw.test);
  return p;
}

}  // namespace dysurv
