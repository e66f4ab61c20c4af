#pragma once

// Conditional VAE survival model: LSTM encoder -> Gaussian latent ->
// (conditional decoder during training, discrete-time survival head always).

#include "dysurv/autodiff.hpp"
#include "dysurv/data.hpp"
#include "dysurv/nn.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dysurv {

/// What the decoder is conditioned on besides the latent vector.
enum class ConditionMode { labels, times, both };

const char* condition_mode_name(ConditionMode mode);
ConditionMode parse_condition_mode(const std::string& name);

/// train: dropout and latent sampling on. validate: deterministic, decoder
/// available for the reconstruction loss. infer: decoder forbidden.
enum class Phase { train, validate, infer };

/// stochastic: z = mu + eps * sigma while training. deterministic: z = mu
/// always (the non-variational logistic-hazard baseline).
enum class LatentMode { stochastic, deterministic };

struct ModelConfig {
  Index hidden = 64;
  Index z_dim = 16;
  Index decoder_hidden = 64;
  Index survival_hidden = 64;
  ConditionMode condition = ConditionMode::both;
};

struct DySurvParams {
  ad::ParamStore store;
  nn::LSTMCellParams encoder;
  nn::DenseLayerParams mu_head;
  nn::DenseLayerParams logvar_head;
  std::vector<nn::DenseLayerParams> decoder;
  std::vector<nn::DenseLayerParams> survival_head;

  ModelConfig config;
  double alpha = 0.5;
  double dropout_keep = 1.0;
  LatentMode latent = LatentMode::stochastic;
  Index seq_len = 1;
  Index width = 1;
  int k_bins = 10;

  Index z_dim() const { return config.z_dim; }
  Index cond_dim() const;
};

DySurvParams init_params(const ModelConfig& config, Index seq_len, Index width, int k_bins,
                         double alpha, double dropout_keep, std::uint64_t seed,
                         LatentMode latent = LatentMode::stochastic);

/// Preprocessed subjects laid out for batched evaluation.
struct ModelData {
  Index seq_len = 1;
  Index width = 0;
  std::vector<Matrix> steps;  // seq_len matrices, width x N
  std::vector<int> bins;
  std::vector<int> events;
  std::vector<int> window_bins;
  std::vector<double> durations;
  std::vector<std::string> ids;

  Index size() const { return static_cast<Index>(bins.size()); }
  ModelData subset(std::span<const Index> columns) const;
  /// (seq_len * width) x N, steps stacked vertically.
  Matrix stacked() const;
};

/// `prepared` must already be transformed and filled.
ModelData to_model_data(const SurvivalDataset& prepared, const TimeGrid& grid);

// ---------------------------------------------------------------------------
// Plain (non-batched) interface.

struct LatentSample {
  Vector mu;
  Vector sigma;
  Vector eps;
  Vector z;
};

/// Event one-hot (censored, event) followed by the duration-bin one-hot
/// (k_bins + 1 slots), restricted according to the condition mode.
struct ConditionVector {
  Vector values;

  static ConditionVector make(bool event, int bin, int k_bins, ConditionMode mode);
};

struct RiskEstimate {
  Vector a_hat;     // k_bins + 1 probabilities; last = beyond the horizon
  Vector cif;       // k_bins cumulative sums
  Vector survival;  // k_bins values, 1 - cif

  static RiskEstimate from_probabilities(Vector a_hat);
  int k_bins() const { return static_cast<int>(cif.size()); }
};

struct Encoding {
  Vector mu;
  Vector logvar;
};

/// (mu, logvar) for one preprocessed record.
Encoding encode(const DySurvParams& params, const SubjectRecord& record);

/// z = mu + eps * sigma. Throws E_DOMAIN when a sigma is not positive.
Vector reparameterize(const Vector& mu, const Vector& sigma, const Vector& eps);
LatentSample sample_latent(const Encoding& enc, std::mt19937_64& rng);

/// Reconstruction (seq_len x width). Throws E_CONTRACT in the infer phase.
Matrix decode(const DySurvParams& params, const Vector& z, const ConditionVector& cond,
              Phase phase = Phase::train);

RiskEstimate predict_risk(const DySurvParams& params, const SubjectRecord& record);
std::vector<RiskEstimate> predict_risk(const DySurvParams& params, const ModelData& data);

/// Summed censored negative log-likelihood; window bins of kNoWindow give an
/// empty conditioning sum.
double loss_survival_nll(std::span<const RiskEstimate> estimates, std::span<const int> bins,
                         std::span<const int> events, std::span<const int> window_bins);

/// Mean squared reconstruction error plus the Gaussian KL term.
double loss_vae(const Matrix& x, const Matrix& recon, const Vector& mu, const Vector& sigma);

double loss_total(double l1, double l2, double alpha);

/// Piecewise-linear survival through (0, 1) and the bin boundaries.
/// Throws E_DOMAIN outside [0, t_max].
double interpolate_survival(const RiskEstimate& estimate, const TimeGrid& grid, double t);

// ---------------------------------------------------------------------------
// Batched tape interface used by training and gradient checks.

namespace graph {

struct Encoded {
  ad::Var mu;
  ad::Var logvar;
};

/// `steps` are seq_len matrices of width x batch.
Encoded encode(ad::Tape& tape, const DySurvParams& params, std::span<const Matrix> steps,
               Phase phase, std::mt19937_64& rng);

ad::Var reparameterize(ad::Var mu, ad::Var sigma, const Matrix& eps);

ad::Var condition(ad::Tape& tape, const DySurvParams& params, std::span<const int> bins,
                  std::span<const int> events);

ad::Var decode(ad::Tape& tape, const DySurvParams& params, ad::Var z, ad::Var cond,
               Phase phase);

/// (k_bins + 1) x batch probabilities.
ad::Var survival_probabilities(ad::Tape& tape, const DySurvParams& params, ad::Var z,
                               Phase phase, std::mt19937_64& rng);

/// Summed negative log-likelihood (1 x 1). Throws E_NUMERICAL naming the
/// offending subjects when a conditioning denominator is not positive.
ad::Var survival_nll(ad::Var probs, std::span<const int> bins, std::span<const int> events,
                     std::span<const int> window_bins);

/// MSE over all entries plus the KL term averaged over the batch columns;
/// sigma^2 = exp(logvar).
ad::Var vae_loss(ad::Var x, ad::Var recon, ad::Var mu, ad::Var logvar);

ad::Var total_loss(ad::Var l1, ad::Var l2, double alpha);

struct BatchLoss {
  ad::Var total;
  ad::Var l1;  // NLL summed over the batch
  ad::Var l2;
};

/// Full objective on a batch. `fixed_eps` (z_dim x batch) replaces the latent
/// noise draw when given.
BatchLoss batch_loss(ad::Tape& tape, const DySurvParams& params, const ModelData& batch,
                     Phase phase, std::mt19937_64& rng, const Matrix* fixed_eps = nullptr);

}  // namespace graph

}  // namespace dysurv
