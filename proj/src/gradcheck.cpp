#include "dysurv/gradcheck.hpp"

#include "dysurv/error.hpp"

#include <cmath>
#include <random>

namespace dysurv {

namespace {

double evaluate(const LossBuilder& loss, const ad::ParamStore& params) {
  ad::Tape tape;
  return loss(tape, params).scalar();
}

}  // namespace

GradCheckReport finite_difference_check(const LossBuilder& loss,
                                        const ad::ParamStore& params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw Error(ErrorCode::domain, "finite-difference eps must lie in [1e-7, 1e-3]");
  }
  ad::Gradients analytic;
  double f0 = 0.0;
  {
    ad::Tape tape;
    const auto l = loss(tape, params);
    f0 = l.scalar();
    analytic = tape.backward(l, params);
  }
  if (evaluate(loss, params) != f0) {
    throw Error(ErrorCode::reproducibility,
                "loss is not deterministic; disable dropout and fix the noise");
  }

  GradCheckReport report;
  ad::ParamStore probe = params;
  for (std::size_t p = 0; p < probe.size(); ++p) {
    const ad::ParamId id{p};
    Matrix& w = probe[id];
    for (Index k = 0; k < w.size(); ++k) {
      const double saved = w.data()[k];
      w.data()[k] = saved + eps;
      const double up = evaluate(loss, probe);
      w.data()[k] = saved - eps;
      const double down = evaluate(loss, probe);
      w.data()[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[id].data()[k];
      const double rel =
          std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++report.coordinates;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = probe.name(id);
        report.worst_index = k;
      }
    }
  }
  return report;
}

GradCheckReport check_model_gradients(const ModelCheckConfig& c) {
  ModelConfig mc;
  mc.hidden = c.hidden;
  mc.z_dim = c.z_dim;
  mc.decoder_hidden = c.hidden;
  mc.survival_hidden = c.hidden;
  const auto params = init_params(mc, c.seq_len, c.width, c.k_bins, c.alpha, 1.0, c.seed);

  std::mt19937_64 rng(c.seed + 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> bin(0, c.k_bins - 1);
  auto gaussian = [&](Index r, Index k) {
    Matrix m(r, k);
    for (Index j = 0; j < k; ++j)
      for (Index i = 0; i < r; ++i) m(i, j) = normal(rng);
    return m;
  };
  ModelData batch;
  batch.seq_len = c.seq_len;
  batch.width = c.width;
  for (Index t = 0; t < c.seq_len; ++t) batch.steps.push_back(gaussian(c.width, c.batch));
  for (Index i = 0; i < c.batch; ++i) {
    const int b = bin(rng);
    batch.bins.push_back(b);
    batch.events.push_back(i % 2 == 0 ? 1 : 0);
    batch.window_bins.push_back(i % 3 == 0 || b == 0 ? kNoWindow : b - 1);
    batch.durations.push_back(b + 0.5);
    batch.ids.push_back(std::to_string(i));
  }
  const Matrix eps = gaussian(c.z_dim, c.batch);

  // Tape leaves alias `probe.store`, so it must outlive every tape.
  DySurvParams probe = params;
  const LossBuilder loss = [&](ad::Tape& tape, const ad::ParamStore& store) {
    for (std::size_t i = 0; i < store.size(); ++i) probe.store[ad::ParamId{i}] = store[ad::ParamId{i}];
    std::mt19937_64 unused(0);
    return graph::batch_loss(tape, probe, batch, Phase::train, unused, &eps).total;
  };
  return finite_difference_check(loss, params.store, c.eps);
}

}  // namespace dysurv
