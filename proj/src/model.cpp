#include "dysurv/model.hpp"

#include "dysurv/error.hpp"

#include <algorithm>
#include <cmath>

namespace dysurv {

using ad::Var;

const char* condition_mode_name(ConditionMode mode) {
  switch (mode) {
    case ConditionMode::labels: return "labels";
    case ConditionMode::times: return "times";
    case ConditionMode::both: return "both";
  }
  return "?";
}

ConditionMode parse_condition_mode(const std::string& name) {
  for (auto m : {ConditionMode::labels, ConditionMode::times, ConditionMode::both}) {
    if (name == condition_mode_name(m)) return m;
  }
  throw Error(ErrorCode::parse, "unknown condition mode '" + name + "'");
}

Index DySurvParams::cond_dim() const {
  switch (config.condition) {
    case ConditionMode::labels: return 2;
    case ConditionMode::times: return k_bins + 1;
    case ConditionMode::both: return 2 + k_bins + 1;
  }
  return 0;
}

DySurvParams init_params(const ModelConfig& config, Index seq_len, Index width, int k_bins,
                         double alpha, double dropout_keep, std::uint64_t seed,
                         LatentMode latent) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::domain, "alpha must lie in [0, 1]");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) {
    throw Error(ErrorCode::domain, "dropout_keep must lie in (0, 1]");
  }
  if (config.z_dim < 1 || config.hidden < 1 || config.decoder_hidden < 1 ||
      config.survival_hidden < 1) {
    throw Error(ErrorCode::domain, "layer sizes must be positive");
  }
  if (seq_len < 1 || width < 1 || k_bins < 2) {
    throw Error(ErrorCode::shape, "model needs seq_len >= 1, width >= 1, k_bins >= 2");
  }
  DySurvParams p;
  p.config = config;
  p.alpha = alpha;
  p.dropout_keep = dropout_keep;
  p.latent = latent;
  p.seq_len = seq_len;
  p.width = width;
  p.k_bins = k_bins;

  std::mt19937_64 rng(seed);
  using nn::Activation;
  p.encoder = nn::make_lstm(p.store, "encoder", width, config.hidden, rng);
  p.mu_head = nn::make_dense(p.store, "mu", config.hidden, config.z_dim, Activation::identity, rng);
  p.logvar_head =
      nn::make_dense(p.store, "logvar", config.hidden, config.z_dim, Activation::identity, rng);
  p.decoder.push_back(nn::make_dense(p.store, "decoder.0", config.z_dim + p.cond_dim(),
                                     config.decoder_hidden, Activation::tanh, rng));
  p.decoder.push_back(nn::make_dense(p.store, "decoder.1", config.decoder_hidden,
                                     seq_len * width, Activation::identity, rng));
  p.survival_head.push_back(nn::make_dense(p.store, "survival.0", config.z_dim,
                                           config.survival_hidden, Activation::tanh, rng));
  p.survival_head.push_back(nn::make_dense(p.store, "survival.1", config.survival_hidden,
                                           k_bins + 1, Activation::softmax, rng));
  return p;
}

// ---------------------------------------------------------------------------
// Model data

ModelData ModelData::subset(std::span<const Index> columns) const {
  ModelData out;
  out.seq_len = seq_len;
  out.width = width;
  const auto n = static_cast<Index>(columns.size());
  for (const auto& s : steps) {
    Matrix m(width, n);
    for (Index k = 0; k < n; ++k) m.col(k) = s.col(columns[static_cast<std::size_t>(k)]);
    out.steps.push_back(std::move(m));
  }
  for (Index c : columns) {
    const auto i = static_cast<std::size_t>(c);
    out.bins.push_back(bins[i]);
    out.events.push_back(events[i]);
    out.window_bins.push_back(window_bins[i]);
    out.durations.push_back(durations[i]);
    out.ids.push_back(ids[i]);
  }
  return out;
}

Matrix ModelData::stacked() const {
  Matrix x(seq_len * width, size());
  for (Index t = 0; t < seq_len; ++t) x.middleRows(t * width, width) = steps[static_cast<std::size_t>(t)];
  return x;
}

ModelData to_model_data(const SurvivalDataset& prepared, const TimeGrid& grid) {
  ModelData d;
  d.seq_len = prepared.seq_len();
  d.width = prepared.schema.static_width() + prepared.schema.series_width();
  const auto n = static_cast<Index>(prepared.size());
  d.steps.assign(static_cast<std::size_t>(d.seq_len), Matrix(d.width, n));
  for (Index i = 0; i < n; ++i) {
    const auto& r = prepared.records[static_cast<std::size_t>(i)];
    const Matrix x = replicate_static(r);
    if (x.rows() != d.seq_len || x.cols() != d.width) {
      throw Error(ErrorCode::shape, "record '" + r.id + "' does not match the dataset shape");
    }
    for (Index t = 0; t < d.seq_len; ++t) d.steps[static_cast<std::size_t>(t)].col(i) = x.row(t).transpose();
    d.bins.push_back(discretize(grid, r.duration));
    d.events.push_back(r.event ? 1 : 0);
    d.window_bins.push_back(window_bin(grid, r.window_end, r.duration));
    d.durations.push_back(r.duration);
    d.ids.push_back(r.id);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Batched graph

namespace graph {

namespace {

void check_steps(const DySurvParams& params, std::span<const Matrix> steps) {
  if (static_cast<Index>(steps.size()) != params.seq_len) {
    throw Error(ErrorCode::shape, "expected " + std::to_string(params.seq_len) +
                                      " time steps, got " + std::to_string(steps.size()));
  }
  for (const auto& s : steps) {
    if (s.rows() != params.width) {
      throw Error(ErrorCode::shape, "expected " + std::to_string(params.width) +
                                        " input features, got " + std::to_string(s.rows()));
    }
  }
}

}  // namespace

Encoded encode(ad::Tape& tape, const DySurvParams& params, std::span<const Matrix> steps,
               Phase phase, std::mt19937_64& rng) {
  check_steps(params, steps);
  std::vector<Var> inputs;
  inputs.reserve(steps.size());
  for (const auto& s : steps) inputs.push_back(tape.constant(s));
  Var h = nn::lstm_sequence(tape, params.store, params.encoder, inputs);
  h = ad::dropout(h, params.dropout_keep, rng, phase == Phase::train);
  return {nn::dense_forward(tape, params.store, params.mu_head, h),
          nn::dense_forward(tape, params.store, params.logvar_head, h)};
}

Var reparameterize(Var mu, Var sigma, const Matrix& eps) {
  Var noise = mu.tape->constant(eps);
  return mu + ad::mul(sigma, noise);
}

Var condition(ad::Tape& tape, const DySurvParams& params, std::span<const int> bins,
              std::span<const int> events) {
  const auto n = static_cast<Index>(bins.size());
  Matrix c(params.cond_dim(), n);
  for (Index i = 0; i < n; ++i) {
    c.col(i) = ConditionVector::make(events[static_cast<std::size_t>(i)] != 0,
                                     bins[static_cast<std::size_t>(i)], params.k_bins,
                                     params.config.condition)
                   .values;
  }
  return tape.constant(std::move(c));
}

Var decode(ad::Tape& tape, const DySurvParams& params, Var z, Var cond, Phase phase) {
  if (phase == Phase::infer) {
    throw Error(ErrorCode::contract, "the decoder is not used at inference time");
  }
  Var h = ad::concat_rows(z, cond);
  for (const auto& layer : params.decoder) h = nn::dense_forward(tape, params.store, layer, h);
  return h;
}

Var survival_probabilities(ad::Tape& tape, const DySurvParams& params, Var z, Phase phase,
                           std::mt19937_64& rng) {
  Var h = nn::dense_forward(tape, params.store, params.survival_head[0], z);
  h = ad::dropout(h, params.dropout_keep, rng, phase == Phase::train);
  for (std::size_t l = 1; l < params.survival_head.size(); ++l) {
    h = nn::dense_forward(tape, params.store, params.survival_head[l], h);
  }
  return h;
}

Var survival_nll(Var probs, std::span<const int> bins, std::span<const int> events,
                 std::span<const int> window_bins) {
  auto& tape = *probs.tape;
  const Index k1 = probs.rows();
  const Index n = probs.cols();
  if (static_cast<Index>(bins.size()) != n || static_cast<Index>(events.size()) != n ||
      static_cast<Index>(window_bins.size()) != n) {
    throw Error(ErrorCode::shape, "label vectors do not match the batch size");
  }
  // Masks: the event bin, the bins after the event/censoring bin (survival
  // mass), and the bins after the observation window (conditioning mass).
  Matrix at_bin = Matrix::Zero(k1, n);
  Matrix after_bin = Matrix::Zero(k1, n);
  Matrix after_window = Matrix::Zero(k1, n);
  Matrix is_event = Matrix::Zero(1, n);
  Matrix is_censored = Matrix::Zero(1, n);
  const Matrix& p = probs.value();
  std::string bad;
  for (Index i = 0; i < n; ++i) {
    const auto s = static_cast<std::size_t>(i);
    const int b = bins[s];
    const int w = window_bins[s];
    if (b < 0 || b > k1 - 2) {
      throw Error(ErrorCode::domain, "bin " + std::to_string(b) + " outside [0, K-1]");
    }
    if (w < kNoWindow || w > b) {
      throw Error(ErrorCode::domain, "window bin " + std::to_string(w) +
                                         " must lie in [-1, event bin]");
    }
    at_bin(b, i) = 1.0;
    after_bin.col(i).tail(k1 - 1 - b).setOnes();
    after_window.col(i).tail(k1 - 1 - w).setOnes();
    if (events[s]) {
      is_event(0, i) = 1.0;
      if (!(p.col(i).tail(k1 - 1 - w).sum() > 0.0)) {
        bad += (bad.empty() ? "" : ",") + std::to_string(i);
      }
    } else {
      is_censored(0, i) = 1.0;
    }
  }
  if (!bad.empty()) {
    throw Error(ErrorCode::numerical,
                "conditioning denominator is not positive for batch columns [" + bad + "]");
  }
  constexpr double lo = 1e-12;
  auto masked_sum = [&](const Matrix& mask) {
    return ad::clamp(ad::sum_rows(ad::mul(probs, tape.constant(mask))), lo, 1.0);
  };
  const Var event_term =
      ad::log(masked_sum(at_bin)) - ad::log(masked_sum(after_window));
  const Var censored_term = ad::log(masked_sum(after_bin));
  const Var loglik = ad::sum(ad::mul(event_term, tape.constant(is_event))) +
                     ad::sum(ad::mul(censored_term, tape.constant(is_censored)));
  return ad::affine(loglik, -1.0);
}

Var vae_loss(Var x, Var recon, Var mu, Var logvar) {
  const Var mse = ad::mean(ad::square(x - recon));
  const auto batch = static_cast<double>(mu.cols());
  const auto zdim = static_cast<double>(mu.rows());
  const Var kl_sum = ad::sum(ad::square(mu) + (ad::exp(logvar) - logvar));
  // 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2) / batch
  const Var kl = ad::affine(kl_sum, 0.5 / batch, -0.5 * zdim);
  return mse + kl;
}

Var total_loss(Var l1, Var l2, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::domain, "alpha must lie in [0, 1]");
  return ad::affine(l1, alpha) + ad::affine(l2, 1.0 - alpha);
}

BatchLoss batch_loss(ad::Tape& tape, const DySurvParams& params, const ModelData& batch,
                     Phase phase, std::mt19937_64& rng, const Matrix* fixed_eps) {
  if (phase == Phase::infer) {
    throw Error(ErrorCode::contract, "losses are not evaluated at inference time");
  }
  const auto enc = encode(tape, params, batch.steps, phase, rng);
  Var z = enc.mu;
  if (phase == Phase::train && params.latent == LatentMode::stochastic) {
    Matrix eps;
    if (fixed_eps) {
      if (fixed_eps->rows() != enc.mu.rows() || fixed_eps->cols() != enc.mu.cols()) {
        throw Error(ErrorCode::shape, "fixed latent noise has the wrong shape");
      }
      eps = *fixed_eps;
    } else {
      std::normal_distribution<double> normal(0.0, 1.0);
      eps.resize(enc.mu.rows(), enc.mu.cols());
      for (Index j = 0; j < eps.cols(); ++j)
        for (Index i = 0; i < eps.rows(); ++i) eps(i, j) = normal(rng);
    }
    const Var sigma = ad::exp(ad::affine(enc.logvar, 0.5));
    z = reparameterize(enc.mu, sigma, eps);
  }
  const Var probs = survival_probabilities(tape, params, z, phase, rng);
  const Var l1 = survival_nll(probs, batch.bins, batch.events, batch.window_bins);
  const Var cond = condition(tape, params, batch.bins, batch.events);
  const Var recon = decode(tape, params, z, cond, phase);
  const Var l2 = vae_loss(tape.constant(batch.stacked()), recon, enc.mu, enc.logvar);
  return {total_loss(l1, l2, params.alpha), l1, l2};
}

}  // namespace graph

// ---------------------------------------------------------------------------
// Plain interface

ConditionVector ConditionVector::make(bool event, int bin, int k_bins, ConditionMode mode) {
  if (bin < 0 || bin > k_bins) throw Error(ErrorCode::domain, "condition bin out of range");
  Vector labels = Vector::Zero(2);
  labels[event ? 1 : 0] = 1.0;
  Vector times = Vector::Zero(k_bins + 1);
  times[bin] = 1.0;
  ConditionVector c;
  switch (mode) {
    case ConditionMode::labels: c.values = labels; break;
    case ConditionMode::times: c.values = times; break;
    case ConditionMode::both:
      c.values.resize(2 + k_bins + 1);
      c.values << labels, times;
      break;
  }
  return c;
}

RiskEstimate RiskEstimate::from_probabilities(Vector a_hat) {
  RiskEstimate r;
  const Index k = a_hat.size() - 1;
  r.cif.resize(k);
  double acc = 0.0;
  for (Index b = 0; b < k; ++b) {
    acc += a_hat[b];
    r.cif[b] = acc;
  }
  r.survival = (1.0 - r.cif.array()).matrix();
  r.a_hat = std::move(a_hat);
  return r;
}

namespace {

std::vector<Matrix> record_steps(const DySurvParams& params, const SubjectRecord& record) {
  const Matrix x = replicate_static(record);
  if (x.rows() != params.seq_len || x.cols() != params.width) {
    throw Error(ErrorCode::shape, "record '" + record.id + "' does not match the model input shape");
  }
  std::vector<Matrix> steps;
  for (Index t = 0; t < x.rows(); ++t) steps.push_back(x.row(t).transpose());
  return steps;
}

}  // namespace

Encoding encode(const DySurvParams& params, const SubjectRecord& record) {
  const auto steps = record_steps(params, record);
  ad::Tape tape;
  std::mt19937_64 rng(0);
  const auto enc = graph::encode(tape, params, steps, Phase::infer, rng);
  return {enc.mu.value().col(0), enc.logvar.value().col(0)};
}

Vector reparameterize(const Vector& mu, const Vector& sigma, const Vector& eps) {
  if (mu.size() != sigma.size() || mu.size() != eps.size()) {
    throw Error(ErrorCode::shape, "reparameterize: length mismatch");
  }
  if ((sigma.array() <= 0.0).any()) throw Error(ErrorCode::domain, "sigma must be positive");
  return mu + eps.cwiseProduct(sigma);
}

LatentSample sample_latent(const Encoding& enc, std::mt19937_64& rng) {
  LatentSample s;
  s.mu = enc.mu;
  s.sigma = (0.5 * enc.logvar.array()).exp().matrix();
  s.eps.resize(enc.mu.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < s.eps.size(); ++i) s.eps[i] = normal(rng);
  s.z = reparameterize(s.mu, s.sigma, s.eps);
  return s;
}

Matrix decode(const DySurvParams& params, const Vector& z, const ConditionVector& cond,
              Phase phase) {
  if (phase == Phase::infer) {
    throw Error(ErrorCode::contract, "the decoder is not used at inference time");
  }
  if (z.size() != params.z_dim() || cond.values.size() != params.cond_dim()) {
    throw Error(ErrorCode::shape, "decode: latent or condition length mismatch");
  }
  ad::Tape tape;
  const Var out = graph::decode(tape, params, tape.constant(z), tape.constant(cond.values), phase);
  Matrix flat = out.value();
  Matrix recon(params.seq_len, params.width);
  for (Index t = 0; t < params.seq_len; ++t) {
    recon.row(t) = flat.block(t * params.width, 0, params.width, 1).transpose();
  }
  return recon;
}

RiskEstimate predict_risk(const DySurvParams& params, const SubjectRecord& record) {
  const auto steps = record_steps(params, record);
  ad::Tape tape;
  std::mt19937_64 rng(0);
  const auto enc = graph::encode(tape, params, steps, Phase::infer, rng);
  const Var probs = graph::survival_probabilities(tape, params, enc.mu, Phase::infer, rng);
  return RiskEstimate::from_probabilities(probs.value().col(0));
}

std::vector<RiskEstimate> predict_risk(const DySurvParams& params, const ModelData& data) {
  std::vector<RiskEstimate> out;
  out.reserve(static_cast<std::size_t>(data.size()));
  constexpr Index chunk = 4096;
  std::mt19937_64 rng(0);
  for (Index start = 0; start < data.size(); start += chunk) {
    const Index len = std::min(chunk, data.size() - start);
    std::vector<Matrix> steps;
    for (const auto& s : data.steps) steps.push_back(s.middleCols(start, len));
    ad::Tape tape;
    const auto enc = graph::encode(tape, params, steps, Phase::infer, rng);
    const Var probs = graph::survival_probabilities(tape, params, enc.mu, Phase::infer, rng);
    for (Index i = 0; i < len; ++i) out.push_back(RiskEstimate::from_probabilities(probs.value().col(i)));
  }
  return out;
}

double loss_survival_nll(std::span<const RiskEstimate> estimates, std::span<const int> bins,
                         std::span<const int> events, std::span<const int> window_bins) {
  if (estimates.empty()) return 0.0;
  const Index k1 = estimates.front().a_hat.size();
  Matrix probs(k1, static_cast<Index>(estimates.size()));
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (estimates[i].a_hat.size() != k1) throw Error(ErrorCode::shape, "mixed bin counts");
    probs.col(static_cast<Index>(i)) = estimates[i].a_hat;
  }
  ad::Tape tape;
  return graph::survival_nll(tape.constant(std::move(probs)), bins, events, window_bins).scalar();
}

double loss_vae(const Matrix& x, const Matrix& recon, const Vector& mu, const Vector& sigma) {
  if (x.rows() != recon.rows() || x.cols() != recon.cols() || mu.size() != sigma.size()) {
    throw Error(ErrorCode::shape, "loss_vae: shape mismatch");
  }
  if ((sigma.array() <= 0.0).any()) throw Error(ErrorCode::domain, "sigma must be positive");
  const double mse = (x - recon).squaredNorm() / static_cast<double>(x.size());
  const auto s2 = sigma.array().square();
  const double kl = 0.5 * (mu.array().square() + s2 - 1.0 - s2.log()).sum();
  return mse + kl;
}

double loss_total(double l1, double l2, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::domain, "alpha must lie in [0, 1]");
  return alpha * l1 + (1.0 - alpha) * l2;
}

double interpolate_survival(const RiskEstimate& estimate, const TimeGrid& grid, double t) {
  if (!(t >= 0.0 && t <= grid.t_max)) {
    throw Error(ErrorCode::domain, "t = " + std::to_string(t) + " outside [0, t_max]");
  }
  const int k = grid.k_bins;
  if (estimate.k_bins() != k) throw Error(ErrorCode::shape, "estimate and grid disagree on K");
  const int b = std::min(k - 1, static_cast<int>(std::floor(k * t / grid.t_max)));
  const double left = b == 0 ? 1.0 : estimate.survival[b - 1];
  const double right = estimate.survival[b];
  const double t0 = grid.boundaries[b];
  const double t1 = grid.boundaries[b + 1];
  const double w = (t - t0) / (t1 - t0);
  return w == 0.0 ? left : left + w * (right - left);
}

}  // namespace dysurv
