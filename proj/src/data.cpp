#include "dysurv/data.hpp"

#include "dysurv/csv.hpp"
#include "dysurv/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

namespace dysurv {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Schema

Index FeatureSchema::static_width() const {
  Index w = 0;
  for (const auto& c : static_columns) {
    w += c.kind == ColumnKind::numeric ? 1 : static_cast<Index>(c.categories.size());
  }
  return w;
}

std::vector<std::string> FeatureSchema::encoded_static_names() const {
  std::vector<std::string> names;
  for (const auto& c : static_columns) {
    if (c.kind == ColumnKind::numeric) {
      names.push_back(c.name);
    } else {
      for (const auto& cat : c.categories) names.push_back(c.name + "=" + cat);
    }
  }
  return names;
}

std::vector<bool> FeatureSchema::numeric_static_columns() const {
  std::vector<bool> numeric;
  for (const auto& c : static_columns) {
    if (c.kind == ColumnKind::numeric) {
      numeric.push_back(true);
    } else {
      numeric.insert(numeric.end(), c.categories.size(), false);
    }
  }
  return numeric;
}

std::vector<FeatureGroup> FeatureSchema::feature_groups() const {
  std::vector<FeatureGroup> groups;
  Index row = 0;
  for (const auto& c : static_columns) {
    FeatureGroup g{c.name, {}};
    const Index width =
        c.kind == ColumnKind::numeric ? 1 : static_cast<Index>(c.categories.size());
    for (Index k = 0; k < width; ++k) g.rows.push_back(row++);
    groups.push_back(std::move(g));
  }
  for (const auto& f : series_features) groups.push_back({f, {row++}});
  return groups;
}

std::uint64_t FeatureSchema::hash() const {
  std::string canon;
  auto add = [&](const std::string& s) {
    canon += s;
    canon.push_back('\x1f');
  };
  add(duration_col);
  add(event_col);
  for (const auto& c : static_columns) {
    add(c.name);
    add(c.kind == ColumnKind::numeric ? "num" : "cat");
    for (const auto& cat : c.categories) add(cat);
    canon.push_back('\x1e');
  }
  for (const auto& f : series_features) add(f);
  return fnv1a(canon.data(), canon.size());
}

void FeatureSchema::validate() const {
  std::set<std::string> seen{id_col};
  auto claim = [&](const std::string& name) {
    if (!seen.insert(name).second) {
      throw Error(ErrorCode::schema, "column '" + name + "' appears in two roles");
    }
  };
  claim(duration_col);
  claim(event_col);
  for (const auto& c : static_columns) {
    claim(c.name);
    if (c.kind == ColumnKind::categorical && c.categories.size() < 2) {
      throw Error(ErrorCode::schema,
                  "categorical column '" + c.name + "' has fewer than 2 categories");
    }
  }
  for (const auto& f : series_features) claim(f);
}

// ---------------------------------------------------------------------------
// Dataset

std::size_t SurvivalDataset::event_count() const {
  return static_cast<std::size_t>(std::count_if(
      records.begin(), records.end(), [](const auto& r) { return r.event; }));
}

Index SurvivalDataset::seq_len() const {
  return timestamps.empty() ? 1 : static_cast<Index>(timestamps.size());
}

std::vector<double> SurvivalDataset::durations() const {
  std::vector<double> d;
  d.reserve(records.size());
  for (const auto& r : records) d.push_back(r.duration);
  return d;
}

std::vector<int> SurvivalDataset::events() const {
  std::vector<int> e;
  e.reserve(records.size());
  for (const auto& r : records) e.push_back(r.event ? 1 : 0);
  return e;
}

void SurvivalDataset::validate(bool require_event) const {
  schema.validate();
  const Index s = schema.static_width();
  const Index m = schema.series_width();
  const Index j = seq_len();
  for (const auto& r : records) {
    if (r.static_features.size() != s || r.series.rows() != j ||
        r.series.cols() != m || r.observed.rows() != j || r.observed.cols() != m) {
      throw Error(ErrorCode::schema, "record '" + r.id + "' does not match the schema");
    }
    if (!(r.duration >= 0.0) || !std::isfinite(r.duration)) {
      throw Error(ErrorCode::domain, "record '" + r.id + "' has an invalid duration");
    }
  }
  if (require_event && event_count() == 0) {
    throw Error(ErrorCode::schema, "dataset has no observed events");
  }
}

// ---------------------------------------------------------------------------
// Manifest and CSV ingestion

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, "manifest " + path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  Manifest m;
  try {
    m.static_csv = resolve(j.at("static_csv").get<std::string>());
    if (j.contains("series_csv") && !j["series_csv"].is_null()) {
      m.series_csv = resolve(j["series_csv"].get<std::string>());
    }
    m.duration_col = j.value("duration_col", m.duration_col);
    m.event_col = j.value("event_col", m.event_col);
    m.id_col = j.value("id_col", m.id_col);
    m.categorical_cols = j.value("categorical_cols", m.categorical_cols);
    m.time_col = j.value("time_col", m.time_col);
    m.feature_col = j.value("feature_col", m.feature_col);
    m.value_col = j.value("value_col", m.value_col);
    m.time_scale = j.value("time_scale", m.time_scale);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, "manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  json j;
  j["static_csv"] = m.static_csv.string();
  j["series_csv"] = m.series_csv ? json(m.series_csv->string()) : json(nullptr);
  j["id_col"] = m.id_col;
  j["duration_col"] = m.duration_col;
  j["event_col"] = m.event_col;
  j["categorical_cols"] = m.categorical_cols;
  j["time_col"] = m.time_col;
  j["feature_col"] = m.feature_col;
  j["value_col"] = m.value_col;
  j["time_scale"] = m.time_scale;
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

SurvivalDataset load_csv(const std::filesystem::path& manifest_path) {
  return load_csv(read_manifest(manifest_path));
}

namespace {

double parse_numeric(const std::string& field, const std::string& what) {
  auto v = csv::parse_double(field);
  if (!v || !std::isfinite(*v)) {
    throw Error(ErrorCode::parse, what + ": '" + field + "' is not a number");
  }
  return *v;
}

bool parse_event(const std::string& field, const std::string& id) {
  auto v = csv::parse_double(field);
  if (v && *v == 1.0) return true;
  if (v && *v == 0.0) return false;
  throw Error(ErrorCode::parse,
              "subject '" + id + "': event must be 0 or 1, got '" + field + "'");
}

}  // namespace

SurvivalDataset load_csv(const Manifest& manifest, const FeatureSchema* reference) {
  const auto table = csv::read(manifest.static_csv);

  SurvivalDataset ds;
  auto& schema = ds.schema;
  schema.id_col = manifest.id_col;
  schema.duration_col = manifest.duration_col;
  schema.event_col = manifest.event_col;

  const auto id_idx = table.find(manifest.id_col);
  const auto dur_idx = table.column(manifest.duration_col);
  const auto ev_idx = table.column(manifest.event_col);

  std::vector<std::size_t> static_idx;
  if (reference) {
    schema.static_columns = reference->static_columns;
    for (const auto& c : schema.static_columns) static_idx.push_back(table.column(c.name));
  } else {
    const std::set<std::string> cats(manifest.categorical_cols.begin(),
                                     manifest.categorical_cols.end());
    for (const auto& c : cats) table.column(c);
    for (std::size_t i = 0; i < table.header.size(); ++i) {
      if ((id_idx && i == *id_idx) || i == dur_idx || i == ev_idx) continue;
      StaticColumn col{table.header[i], ColumnKind::numeric, {}};
      if (cats.count(col.name)) {
        col.kind = ColumnKind::categorical;
        std::set<std::string> values;
        for (const auto& row : table.rows) values.insert(row[i]);
        col.categories.assign(values.begin(), values.end());
      }
      schema.static_columns.push_back(std::move(col));
      static_idx.push_back(i);
    }
  }

  const Index s = schema.static_width();
  std::unordered_map<std::string, std::size_t> by_id;
  ds.records.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    SubjectRecord rec;
    rec.id = id_idx ? row[*id_idx] : std::to_string(r);
    if (!by_id.emplace(rec.id, r).second) {
      throw Error(ErrorCode::schema, "duplicate subject id '" + rec.id + "'");
    }
    rec.duration = parse_numeric(row[dur_idx], "subject '" + rec.id + "' duration");
    if (rec.duration < 0.0) {
      throw Error(ErrorCode::domain, "subject '" + rec.id + "' has negative duration");
    }
    rec.event = parse_event(row[ev_idx], rec.id);
    rec.static_features = Vector::Zero(s);
    Index out = 0;
    for (std::size_t c = 0; c < schema.static_columns.size(); ++c) {
      const auto& col = schema.static_columns[c];
      const auto& field = row[static_idx[c]];
      if (col.kind == ColumnKind::numeric) {
        rec.static_features[out++] =
            parse_numeric(field, "subject '" + rec.id + "' column '" + col.name + "'");
        continue;
      }
      auto it = std::find(col.categories.begin(), col.categories.end(), field);
      if (it == col.categories.end()) {
        throw Error(ErrorCode::schema, "subject '" + rec.id + "': unknown category '" +
                                           field + "' in column '" + col.name + "'");
      }
      rec.static_features[out + (it - col.categories.begin())] = 1.0;
      out += static_cast<Index>(col.categories.size());
    }
    ds.records.push_back(std::move(rec));
  }

  if (manifest.series_csv) {
    const auto series = csv::read(*manifest.series_csv);
    const auto sid = series.column(manifest.id_col);
    const auto tcol = series.column(manifest.time_col);
    const auto fcol = series.column(manifest.feature_col);
    const auto vcol = series.column(manifest.value_col);

    std::set<double> times;
    std::set<std::string> features;
    for (const auto& row : series.rows) {
      if (!by_id.count(row[sid])) {
        throw Error(ErrorCode::referential,
                    "series subject '" + row[sid] + "' is absent from the static CSV");
      }
      times.insert(parse_numeric(row[tcol], "series time"));
      features.insert(row[fcol]);
    }
    if (reference) {
      schema.series_features = reference->series_features;
      for (const auto& f : features) {
        if (std::find(schema.series_features.begin(), schema.series_features.end(), f) ==
            schema.series_features.end()) {
          throw Error(ErrorCode::schema, "unknown series feature '" + f + "'");
        }
      }
    } else {
      schema.series_features.assign(features.begin(), features.end());
    }
    ds.timestamps.assign(times.begin(), times.end());

    const Index j = ds.seq_len();
    const Index m = schema.series_width();
    std::map<std::string, Index> feature_pos;
    for (Index k = 0; k < m; ++k) feature_pos[schema.series_features[k]] = k;
    for (auto& rec : ds.records) {
      rec.series = Matrix::Zero(j, m);
      rec.observed = Mask::Constant(j, m, false);
    }
    for (const auto& row : series.rows) {
      if (row[vcol].empty()) continue;
      auto& rec = ds.records[by_id.at(row[sid])];
      const double t = parse_numeric(row[tcol], "series time");
      const auto ti = static_cast<Index>(
          std::lower_bound(ds.timestamps.begin(), ds.timestamps.end(), t) -
          ds.timestamps.begin());
      const Index fi = feature_pos.at(row[fcol]);
      rec.series(ti, fi) = parse_numeric(row[vcol], "subject '" + rec.id + "' series value");
      rec.observed(ti, fi) = true;
      const double end = t * manifest.time_scale;
      rec.window_end = rec.window_end ? std::max(*rec.window_end, end) : end;
    }
  } else {
    if (reference) schema.series_features = reference->series_features;
    for (auto& rec : ds.records) {
      rec.series = Matrix::Zero(1, schema.series_width());
      rec.observed = Mask::Constant(1, schema.series_width(), false);
    }
  }

  ds.validate(/*require_event=*/reference == nullptr);
  return ds;
}

void save_csv(const SurvivalDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& schema = ds.schema;
  {
    std::ofstream out(dir / "static.csv");
    if (!out) throw Error(ErrorCode::io, "cannot write " + (dir / "static.csv").string());
    std::vector<std::string> header{schema.id_col};
    for (const auto& c : schema.static_columns) header.push_back(c.name);
    header.push_back(schema.duration_col);
    header.push_back(schema.event_col);
    csv::write_row(out, header);
    for (const auto& r : ds.records) {
      std::vector<std::string> row{r.id};
      Index k = 0;
      for (const auto& c : schema.static_columns) {
        if (c.kind == ColumnKind::numeric) {
          row.push_back(csv::format(r.static_features[k++]));
          continue;
        }
        Index best = 0;
        const auto width = static_cast<Index>(c.categories.size());
        r.static_features.segment(k, width).maxCoeff(&best);
        row.push_back(c.categories[best]);
        k += width;
      }
      row.push_back(csv::format(r.duration));
      row.push_back(r.event ? "1" : "0");
      csv::write_row(out, row);
    }
  }
  Manifest m;
  m.static_csv = "static.csv";
  m.id_col = schema.id_col;
  m.duration_col = schema.duration_col;
  m.event_col = schema.event_col;
  for (const auto& c : schema.static_columns) {
    if (c.kind == ColumnKind::categorical) m.categorical_cols.push_back(c.name);
  }
  if (schema.series_width() > 0 && !ds.timestamps.empty()) {
    m.series_csv = "series.csv";
    std::ofstream out(dir / "series.csv");
    if (!out) throw Error(ErrorCode::io, "cannot write " + (dir / "series.csv").string());
    csv::write_row(out, {m.id_col, m.time_col, m.feature_col, m.value_col});
    for (const auto& r : ds.records) {
      for (Index t = 0; t < r.series.rows(); ++t) {
        for (Index f = 0; f < r.series.cols(); ++f) {
          if (!r.observed(t, f)) continue;
          csv::write_row(out, {r.id, csv::format(ds.timestamps[t]),
                               schema.series_features[f], csv::format(r.series(t, f))});
        }
      }
    }
  }
  write_manifest(m, dir / "manifest.json");
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

constexpr int kSyntheticPeriods = 10;

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Vector synthetic_weights(Index m) {
  Vector w(m);
  if (m == 1) {
    w[0] = 1.2;
    return w;
  }
  for (Index j = 0; j < m; ++j) {
    const double sign = j % 2 == 0 ? 1.0 : -1.0;
    w[j] = sign * 1.2 * static_cast<double>(m - 1 - j) / static_cast<double>(m - 1);
  }
  return w;
}

// Expected censored fraction when censoring times are U(0, upper).
double censored_fraction(const Matrix& probs, double upper) {
  const Index k = probs.cols() - 1;
  double total = 0.0;
  for (Index i = 0; i < probs.rows(); ++i) {
    double c = probs(i, k);
    for (Index p = 0; p < k; ++p) {
      c += probs(i, p) * std::min(1.0, (static_cast<double>(p) + 0.5) / upper);
    }
    total += c;
  }
  return total / static_cast<double>(probs.rows());
}

}  // namespace

Vector true_event_probabilities(const SyntheticTruth& truth,
                                const Eigen::Ref<const Vector>& x) {
  const int k = truth.periods;
  double score = 0.0;
  for (Index j = 0; j < x.size(); ++j) score += truth.weights[j] * x[j];
  Vector p(k + 1);
  double alive = 1.0;
  for (int t = 0; t < k; ++t) {
    const double h = logistic(score + truth.baseline_logits[t]);
    p[t] = alive * h;
    alive *= 1.0 - h;
  }
  p[k] = alive;
  return p;
}

SyntheticDataset generate_synthetic(std::size_t n, Index m, double censor_frac,
                                    std::uint64_t seed) {
  if (!(censor_frac > 0.0 && censor_frac < 1.0)) {
    throw Error(ErrorCode::domain, "censor_frac must lie in (0, 1)");
  }
  if (n < 10) throw Error(ErrorCode::domain, "synthetic datasets need n >= 10");
  if (m < 1) throw Error(ErrorCode::domain, "synthetic datasets need m >= 1");

  SyntheticDataset out;
  auto& truth = out.truth;
  truth.periods = kSyntheticPeriods;
  truth.weights = synthetic_weights(m);
  truth.baseline_logits.resize(kSyntheticPeriods);
  for (int t = 0; t < kSyntheticPeriods; ++t) truth.baseline_logits[t] = -1.0 + 0.1 * t;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Matrix x(static_cast<Index>(n), m);
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < m; ++j) x(i, j) = normal(rng);

  truth.event_probabilities.resize(static_cast<Index>(n), kSyntheticPeriods + 1);
  for (Index i = 0; i < x.rows(); ++i) {
    truth.event_probabilities.row(i) =
        true_event_probabilities(truth, x.row(i).transpose()).transpose();
  }

  const double floor = truth.event_probabilities.col(kSyntheticPeriods).mean();
  if (censor_frac <= floor) {
    throw Error(ErrorCode::domain,
                "censor_frac " + std::to_string(censor_frac) +
                    " is below the administrative-censoring floor " +
                    std::to_string(floor));
  }
  // Censored fraction decreases in the upper bound; bisect in log space.
  double lo = std::log(1e-6), hi = std::log(1e9);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (censored_fraction(truth.event_probabilities, std::exp(mid)) > censor_frac) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  truth.censor_upper = std::exp(0.5 * (lo + hi));

  auto& ds = out.data;
  for (Index j = 0; j < m; ++j) {
    ds.schema.static_columns.push_back({"x" + std::to_string(j), ColumnKind::numeric, {}});
  }
  ds.records.resize(n);
  std::vector<double> event_time(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = unif(rng);
    double cum = 0.0;
    int period = kSyntheticPeriods;
    for (int t = 0; t < kSyntheticPeriods; ++t) {
      cum += truth.event_probabilities(static_cast<Index>(i), t);
      if (u < cum) {
        period = t;
        break;
      }
    }
    event_time[i] = period < kSyntheticPeriods ? period + 0.5 : -1.0;
  }
  std::uniform_real_distribution<double> censor(0.0, truth.censor_upper);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = censor(rng);
    auto& r = ds.records[i];
    r.id = "s" + std::to_string(i);
    r.static_features = x.row(static_cast<Index>(i)).transpose();
    r.series = Matrix::Zero(1, 0);
    r.observed = Mask::Constant(1, 0, false);
    if (event_time[i] > 0.0 && event_time[i] <= c) {
      r.duration = event_time[i];
      r.event = true;
    } else {
      r.duration = std::min(c, static_cast<double>(kSyntheticPeriods));
      r.event = false;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

DatasetSplit split_dataset(const SurvivalDataset& ds, std::uint64_t seed) {
  if (ds.size() < 5) throw Error(ErrorCode::domain, "split needs at least 5 records");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> events, censored;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    (ds.records[i].event ? events : censored).push_back(i);
  }
  DatasetSplit split;
  std::vector<std::size_t> order;
  if (events.size() < 3) {
    split.stratified = false;
    split.warning = "fewer than one event per split; falling back to unstratified split";
    order.resize(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    std::shuffle(events.begin(), events.end(), rng);
    std::shuffle(censored.begin(), censored.end(), rng);
    order = events;
    order.insert(order.end(), censored.begin(), censored.end());
  }
  // Cyclic 3:1:1 assignment keeps every stratum (contiguous in `order`) at
  // 60/20/20 up to one record.
  std::vector<std::size_t> parts[3];
  for (std::size_t p = 0; p < order.size(); ++p) {
    const auto slot = p % 5;
    parts[slot < 3 ? 0 : slot - 2].push_back(order[p]);
  }
  SurvivalDataset* targets[3] = {&split.train, &split.val, &split.test};
  for (int k = 0; k < 3; ++k) {
    std::sort(parts[k].begin(), parts[k].end());
    targets[k]->schema = ds.schema;
    targets[k]->timestamps = ds.timestamps;
    for (auto i : parts[k]) targets[k]->records.push_back(ds.records[i]);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Quantile transform

namespace {

// Inverse standard-normal CDF (Acklam) with one Halley refinement step.
double normal_quantile(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 1 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

QuantileMap fit_map(std::vector<double> values) {
  QuantileMap map;
  if (values.empty()) {
    map.references = Vector::Zero(1);
    map.targets = Vector::Zero(1);
    return map;
  }
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  const std::size_t nq = std::min<std::size_t>(1000, n);
  map.references.resize(static_cast<Index>(nq));
  map.targets.resize(static_cast<Index>(nq));
  constexpr double bound = 1e-7;
  for (std::size_t q = 0; q < nq; ++q) {
    const double level = nq == 1 ? 0.5 : static_cast<double>(q) / static_cast<double>(nq - 1);
    const double pos = level * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    map.references[static_cast<Index>(q)] = values[lo] + frac * (values[hi] - values[lo]);
    map.targets[static_cast<Index>(q)] =
        normal_quantile(std::clamp(level, bound, 1.0 - bound));
  }
  return map;
}

}  // namespace

double QuantileMap::operator()(double x) const {
  if (passthrough()) return x;
  const Index n = references.size();
  if (references[0] == references[n - 1]) return 0.0;
  const double* first = references.data();
  const double* last = first + n;
  if (x <= *first) x = *first;
  if (x >= *(last - 1)) x = *(last - 1);
  const auto lo = std::lower_bound(first, last, x) - first;
  const auto hi = std::upper_bound(first, last, x) - first;
  if (lo != hi) {
    // x hits one or more knots exactly: average the first and last target.
    return 0.5 * (targets[lo] + targets[hi - 1]);
  }
  const double x0 = references[lo - 1], x1 = references[lo];
  const double w = (x - x0) / (x1 - x0);
  return targets[lo - 1] + w * (targets[lo] - targets[lo - 1]);
}

QuantileTransform fit_quantile_transform(const SurvivalDataset& train) {
  QuantileTransform qt;
  const auto numeric = train.schema.numeric_static_columns();
  for (std::size_t c = 0; c < numeric.size(); ++c) {
    if (!numeric[c]) {
      qt.static_maps.emplace_back();
      continue;
    }
    std::vector<double> values;
    values.reserve(train.size());
    for (const auto& r : train.records) values.push_back(r.static_features[static_cast<Index>(c)]);
    qt.static_maps.push_back(fit_map(std::move(values)));
  }
  for (Index f = 0; f < train.schema.series_width(); ++f) {
    std::vector<double> values;
    for (const auto& r : train.records) {
      for (Index t = 0; t < r.series.rows(); ++t) {
        if (r.observed(t, f)) values.push_back(r.series(t, f));
      }
    }
    qt.series_maps.push_back(fit_map(std::move(values)));
  }
  return qt;
}

SurvivalDataset apply_quantile_transform(const QuantileTransform& qt,
                                         const SurvivalDataset& ds) {
  if (qt.static_maps.size() != static_cast<std::size_t>(ds.schema.static_width()) ||
      qt.series_maps.size() != static_cast<std::size_t>(ds.schema.series_width())) {
    throw Error(ErrorCode::schema, "quantile transform does not match dataset schema");
  }
  SurvivalDataset out = ds;
  for (auto& r : out.records) {
    for (Index c = 0; c < r.static_features.size(); ++c) {
      r.static_features[c] = qt.static_maps[static_cast<std::size_t>(c)](r.static_features[c]);
    }
    for (Index t = 0; t < r.series.rows(); ++t) {
      for (Index f = 0; f < r.series.cols(); ++f) {
        if (r.observed(t, f)) r.series(t, f) = qt.series_maps[static_cast<std::size_t>(f)](r.series(t, f));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Missing values and static replication

SubjectRecord fill_missing(const SubjectRecord& record) {
  SubjectRecord out = record;
  const Index j = out.series.rows();
  for (Index f = 0; f < out.series.cols(); ++f) {
    Index first = 0;
    while (first < j && !out.observed(first, f)) ++first;
    if (first == j) {
      out.series.col(f).setZero();
      continue;
    }
    for (Index t = 0; t < first; ++t) out.series(t, f) = out.series(first, f);
    for (Index t = first + 1; t < j; ++t) {
      if (!out.observed(t, f)) out.series(t, f) = out.series(t - 1, f);
    }
  }
  return out;
}

Matrix replicate_static(const SubjectRecord& record) {
  const Index j = record.series.rows();
  const Index s = record.static_features.size();
  Matrix out(j, s + record.series.cols());
  out.leftCols(s) = record.static_features.transpose().replicate(j, 1);
  out.rightCols(record.series.cols()) = record.series;
  return out;
}

// ---------------------------------------------------------------------------
// Time grid

TimeGrid make_time_grid(int k_bins, double t_max) {
  if (k_bins < 2) throw Error(ErrorCode::domain, "time grid needs k >= 2");
  if (!(t_max > 0.0) || !std::isfinite(t_max)) {
    throw Error(ErrorCode::domain, "time grid needs a positive finite t_max");
  }
  TimeGrid g;
  g.k_bins = k_bins;
  g.t_max = t_max;
  g.boundaries.resize(k_bins + 1);
  for (int b = 0; b <= k_bins; ++b) g.boundaries[b] = t_max * b / k_bins;
  g.boundaries[k_bins] = t_max;
  return g;
}

TimeGrid build_time_grid(std::span<const double> train_durations, int k) {
  if (train_durations.empty()) throw Error(ErrorCode::domain, "no training durations");
  double t_max = 0.0;
  for (double d : train_durations) {
    if (d < 0.0) throw Error(ErrorCode::domain, "negative duration");
    t_max = std::max(t_max, d);
  }
  return make_time_grid(k, t_max);
}

int discretize(const TimeGrid& grid, double duration) {
  if (duration < 0.0) throw Error(ErrorCode::domain, "negative duration");
  const double b = std::floor(grid.k_bins * duration / grid.t_max);
  return static_cast<int>(std::clamp(b, 0.0, static_cast<double>(grid.k_bins - 1)));
}

int window_bin(const TimeGrid& grid, std::optional<double> window_end, double duration) {
  if (!window_end) return kNoWindow;
  const double w = std::clamp(*window_end, 0.0, duration);
  const double elapsed = std::floor(grid.k_bins * w / grid.t_max) - 1.0;
  const int b = static_cast<int>(std::clamp(elapsed, -1.0, static_cast<double>(grid.k_bins - 1)));
  return std::min(b, discretize(grid, duration) - 1);
}

}  // namespace dysurv
