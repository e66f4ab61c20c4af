#include "dysurv/training.hpp"

#include "dysurv/csv.hpp"
#include "dysurv/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace dysurv {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::domain, "learning_rate must be positive");
  if (batch_size < 1) throw Error(ErrorCode::domain, "batch_size must be at least 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::domain, "alpha must lie in [0, 1]");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) throw Error(ErrorCode::domain, "dropout_keep must lie in (0, 1]");
  if (max_epochs < 1) throw Error(ErrorCode::domain, "max_epochs must be at least 1");
  if (patience < 1) throw Error(ErrorCode::domain, "patience must be at least 1");
  if (!(clip_norm >= 0.0)) throw Error(ErrorCode::domain, "clip_norm must be nonnegative");
}

AdamState::AdamState(const ad::ParamStore& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[ad::ParamId{i}];
    m.push_back(Matrix::Zero(p.rows(), p.cols()));
    v.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void adam_step(AdamState& state, ad::ParamStore& params, const ad::Gradients& grads, double lr) {
  if (state.m.size() != params.size() || grads.size() != params.size()) {
    throw Error(ErrorCode::shape, "optimizer state does not match the parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ad::ParamId id{i};
    if (!grads[id].allFinite()) {
      throw Error(ErrorCode::numerical, "non-finite gradient for parameter '" + params.name(id) + "'");
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ad::ParamId id{i};
    const Matrix& g = grads[id];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseProduct(g);
    params[id].array() -= lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + state.eps);
  }
}

double clip_gradients(ad::Gradients& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads *= max_norm / norm;
  return norm;
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw Error(ErrorCode::domain, "patience must be at least 1");
}

bool EarlyStopping::update(double val_loss) {
  ++epoch_;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

const EpochRecord& TrainHistory::best() const {
  for (const auto& e : epochs) {
    if (e.epoch == best_epoch) return e;
  }
  throw Error(ErrorCode::contract, "history has no best epoch");
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  csv::write_row(out, {"epoch", "train_l1", "train_l2", "train_total", "val_total"});
  for (const auto& e : epochs) {
    csv::write_row(out, {std::to_string(e.epoch), csv::format(e.train_l1), csv::format(e.train_l2),
                         csv::format(e.train_total), csv::format(e.val_total)});
  }
}

namespace {

constexpr Index kEvalChunk = 4096;

std::vector<Index> iota_columns(Index start, Index len) {
  std::vector<Index> cols(static_cast<std::size_t>(len));
  std::iota(cols.begin(), cols.end(), start);
  return cols;
}

}  // namespace

LossSummary evaluate_loss(const DySurvParams& params, const ModelData& data) {
  if (data.size() == 0) throw Error(ErrorCode::domain, "cannot evaluate a loss on an empty dataset");
  LossSummary s;
  std::mt19937_64 rng(0);
  for (Index start = 0; start < data.size(); start += kEvalChunk) {
    const Index len = std::min(kEvalChunk, data.size() - start);
    const auto cols = iota_columns(start, len);
    const ModelData chunk = len == data.size() ? data : data.subset(cols);
    ad::Tape tape;
    const auto loss = graph::batch_loss(tape, params, chunk, Phase::validate, rng);
    s.l1 += loss.l1.scalar();
    s.l2 += static_cast<double>(len) * loss.l2.scalar();
  }
  const auto n = static_cast<double>(data.size());
  s.l2 /= n;
  s.nll = s.l1 / n;
  s.total = loss_total(s.l1, s.l2, params.alpha);
  return s;
}

FitResult fit(const ModelData& train, const ModelData& val, int k_bins, const TrainConfig& config) {
  config.validate();
  if (train.size() == 0 || val.size() == 0) throw Error(ErrorCode::domain, "train and validation sets must be nonempty");
  if (train.width != val.width || train.seq_len != val.seq_len) {
    throw Error(ErrorCode::shape, "train and validation inputs differ in shape");
  }
  FitResult result{init_params(config.model, train.seq_len, train.width, k_bins, config.alpha,
                               config.dropout_keep, config.seed, config.latent),
                   {}};
  DySurvParams& params = result.params;
  ad::ParamStore best_store = params.store;
  AdamState adam(params.store);
  EarlyStopping stopper(config.patience);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<Index> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), Index{0});
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    int batch_no = 0;
    for (Index start = 0; start < train.size(); start += config.batch_size, ++batch_no) {
      const Index len = std::min(config.batch_size, train.size() - start);
      const ModelData batch =
          train.subset(std::span<const Index>(order).subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len)));
      try {
        ad::Tape tape;
        const auto loss = graph::batch_loss(tape, params, batch, Phase::train, rng);
        auto grads = tape.backward(loss.total, params.store);
        if (config.clip_norm > 0.0) clip_gradients(grads, config.clip_norm);
        adam_step(adam, params.store, grads, config.learning_rate);
        rec.train_l1 += loss.l1.scalar();
        rec.train_l2 += static_cast<double>(len) * loss.l2.scalar();
      } catch (const Error& e) {
        throw Error(e.code(), "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_no) + ": " + e.what());
      }
    }
    rec.train_l2 /= static_cast<double>(train.size());
    rec.train_total = loss_total(rec.train_l1, rec.train_l2, params.alpha);
    LossSummary v;
    try {
      v = evaluate_loss(params, val);
    } catch (const Error& e) {
      throw Error(e.code(), "epoch " + std::to_string(epoch) + " validation: " + e.what());
    }
    rec.val_l1 = v.l1;
    rec.val_nll = v.nll;
    rec.val_l2 = v.l2;
    rec.val_total = v.total;
    result.history.epochs.push_back(rec);
    if (stopper.update(v.total)) best_store = params.store;
    if (stopper.should_stop()) break;
  }
  params.store = std::move(best_store);
  result.history.best_epoch = stopper.best_epoch();
  result.history.best_val_total = stopper.best();
  return result;
}

// ---------------------------------------------------------------------------

std::size_t GridSearchSpace::size() const {
  return learning_rates.size() * batch_sizes.size() * alphas.size() * dropout_keeps.size();
}

void GridSearchSpace::validate() const {
  if (learning_rates.empty() || batch_sizes.empty() || alphas.empty() || dropout_keeps.empty()) {
    throw Error(ErrorCode::domain, "every grid axis needs at least one value");
  }
}

std::vector<TrainConfig> GridSearchSpace::expand(const TrainConfig& base) const {
  validate();
  std::vector<TrainConfig> out;
  for (double lr : learning_rates)
    for (Index b : batch_sizes)
      for (double a : alphas)
        for (double k : dropout_keeps) {
          TrainConfig c = base;
          c.learning_rate = lr;
          c.batch_size = b;
          c.alpha = a;
          c.dropout_keep = k;
          out.push_back(c);
        }
  return out;
}

GridSearchSpace parse_grid(const std::string& text) {
  GridSearchSpace space;
  std::stringstream axes(text);
  std::string axis;
  while (std::getline(axes, axis, ';')) {
    if (axis.empty()) continue;
    const auto eq = axis.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::parse, "grid axis '" + axis + "' lacks '='");
    const std::string key = axis.substr(0, eq);
    std::vector<double> vals;
    std::stringstream items(axis.substr(eq + 1));
    std::string item;
    while (std::getline(items, item, ',')) {
      const auto v = csv::parse_double(item);
      if (!v) throw Error(ErrorCode::parse, "bad grid value '" + item + "'");
      vals.push_back(*v);
    }
    if (vals.empty()) throw Error(ErrorCode::parse, "grid axis '" + key + "' is empty");
    if (key == "lr") space.learning_rates = vals;
    else if (key == "alpha") space.alphas = vals;
    else if (key == "keep") space.dropout_keeps = vals;
    else if (key == "batch") {
      space.batch_sizes.clear();
      for (double v : vals) space.batch_sizes.push_back(static_cast<Index>(v));
    } else {
      throw Error(ErrorCode::parse, "unknown grid axis '" + key + "'");
    }
  }
  return space;
}

namespace {

nlohmann::ordered_json config_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["alpha"] = c.alpha;
  j["dropout_keep"] = c.dropout_keep;
  return j;
}

// Lower validation loss first; ties go to the smaller lr, then the larger batch.
bool better(const TrialResult& a, const TrialResult& b) {
  if (a.best_val_total != b.best_val_total) return a.best_val_total < b.best_val_total;
  if (a.config.learning_rate != b.config.learning_rate) return a.config.learning_rate < b.config.learning_rate;
  return a.config.batch_size > b.config.batch_size;
}

}  // namespace

std::string GridSearchResult::leaderboard_json() const {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  int rank = 1;
  for (const auto& t : leaderboard) {
    nlohmann::ordered_json j;
    j["rank"] = rank++;
    j["config"] = config_json(t.config);
    if (t.ok()) {
      j["val_total"] = t.best_val_total;
      j["val_nll"] = t.best_val_nll;
      j["best_epoch"] = t.best_epoch;
      j["epochs_run"] = t.epochs_run;
    } else {
      j["error"] = t.error;
    }
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

GridSearchResult grid_search(const ModelData& train, const ModelData& val, int k_bins,
                             const GridSearchSpace& space, const TrainConfig& base) {
  GridSearchResult out;
  std::vector<TrialResult> failed;
  std::optional<std::size_t> best;
  for (const auto& cfg : space.expand(base)) {
    TrialResult trial;
    trial.config = cfg;
    try {
      auto f = fit(train, val, k_bins, cfg);
      trial.best_val_total = f.history.best_val_total;
      trial.best_val_nll = f.history.best().val_nll;
      trial.best_epoch = f.history.best_epoch;
      trial.epochs_run = static_cast<int>(f.history.epochs.size());
      if (!best || better(trial, out.leaderboard[*best])) {
        best = out.leaderboard.size();
        out.best_fit = std::move(f);
      }
      out.leaderboard.push_back(trial);
    } catch (const Error& e) {
      trial.error = std::string(code_name(e.code())) + ": " + e.what();
      failed.push_back(trial);
    }
  }
  if (!best) {
    std::string msg = "all " + std::to_string(failed.size()) + " trials failed";
    for (const auto& t : failed) msg += "; " + t.error;
    throw Error(ErrorCode::search_failure, msg);
  }
  out.best = out.leaderboard[*best].config;
  std::stable_sort(out.leaderboard.begin(), out.leaderboard.end(), better);
  out.leaderboard.insert(out.leaderboard.end(), failed.begin(), failed.end());
  return out;
}

// ---------------------------------------------------------------------------

std::string MultiSeedReport::to_json() const {
  nlohmann::ordered_json j;
  auto row = [](const EvalReport& r) {
    nlohmann::ordered_json o;
    o["c_td"] = r.c_td;
    o["ibs"] = r.ibs;
    o["inbll"] = r.inbll;
    return o;
  };
  nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
  for (const auto& r : runs) {
    nlohmann::ordered_json o;
    o["seed"] = r.seed;
    if (r.error.empty()) {
      o.update(row(r.report));
      o["val_nll"] = r.val_nll;
      o["best_epoch"] = r.best_epoch;
    } else {
      o["error"] = r.error;
    }
    seeds.push_back(std::move(o));
  }
  j["seeds"] = std::move(seeds);
  auto m = row(mean);
  m["val_nll"] = mean_val_nll;
  j["mean"] = std::move(m);
  j["incomplete"] = incomplete;
  return j.dump(2);
}

MultiSeedReport multi_seed_report(const ModelData& train, const ModelData& val,
                                  const ModelData& test, const TimeGrid& grid,
                                  const TrainConfig& config, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw Error(ErrorCode::domain, "at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw Error(ErrorCode::domain, "seeds must be distinct");
  }
  MultiSeedReport rep;
  int ok = 0;
  for (auto seed : seeds) {
    SeedRun run;
    run.seed = seed;
    try {
      TrainConfig c = config;
      c.seed = seed;
      const auto f = fit(train, val, grid.k_bins, c);
      const auto est = predict_risk(f.params, test);
      run.report = evaluate(GridCurves(grid, est), test.durations, test.events);
      run.val_nll = f.history.best().val_nll;
      run.best_epoch = f.history.best_epoch;
      rep.mean.c_td += run.report.c_td;
      rep.mean.ibs += run.report.ibs;
      rep.mean.inbll += run.report.inbll;
      rep.mean_val_nll += run.val_nll;
      ++ok;
    } catch (const Error& e) {
      run.error = std::string(code_name(e.code())) + ": " + e.what();
      rep.incomplete = true;
    }
    rep.runs.push_back(std::move(run));
  }
  if (ok > 0) {
    rep.mean.c_td /= ok;
    rep.mean.ibs /= ok;
    rep.mean.inbll /= ok;
    rep.mean_val_nll /= ok;
  }
  return rep;
}

}  // namespace dysurv
