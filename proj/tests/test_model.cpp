#include "dysurv/error.hpp"
#include "dysurv/gradcheck.hpp"
#include "dysurv/model.hpp"
#include "dysurv/pipeline.hpp"

#include "doctest.h"

#include <cmath>
#include <random>

using namespace dysurv;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.hidden = 5;
  c.z_dim = 3;
  c.decoder_hidden = 6;
  c.survival_hidden = 4;
  return c;
}

SubjectRecord random_record(Index j, Index s, Index m, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  SubjectRecord r;
  r.id = "x";
  r.static_features = Vector(s);
  for (Index i = 0; i < s; ++i) r.static_features[i] = n(rng);
  r.series = Matrix(j, m);
  for (Index i = 0; i < r.series.size(); ++i) r.series.data()[i] = n(rng);
  r.observed = Mask::Constant(j, m, true);
  return r;
}

RiskEstimate estimate(std::initializer_list<double> a) {
  Vector v(static_cast<Index>(a.size()));
  Index i = 0;
  for (double x : a) v[i++] = x;
  return RiskEstimate::from_probabilities(v);
}

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::usage;
}

}  // namespace

TEST_CASE("encode: zero weights give the mu bias; shapes; determinism") {
  std::mt19937_64 rng(1);
  auto p = init_params(small_config(), 3, 4, 5, 0.5, 1.0, 7);
  const auto rec = random_record(3, 2, 2, rng);
  const auto a = encode(p, rec);
  const auto b = encode(p, rec);
  CHECK(a.mu.size() == 3);
  CHECK(a.logvar.size() == 3);
  CHECK(a.mu == b.mu);
  CHECK(a.logvar == b.logvar);

  p.store[p.mu_head.weight].setZero();
  p.store[p.mu_head.bias] = Vector::LinSpaced(3, -1.0, 1.0);
  CHECK(encode(p, rec).mu == Vector::LinSpaced(3, -1.0, 1.0));

  const auto wrong = random_record(2, 2, 2, rng);
  CHECK(code_of([&] { encode(p, wrong); }) == ErrorCode::shape);
}

TEST_CASE("reparameterize: formula, identity and Monte-Carlo moments") {
  Vector mu(1), sigma(1), eps(1);
  mu << 2.0;
  sigma << 3.0;
  eps << 0.5;
  CHECK(reparameterize(mu, sigma, eps)[0] == 3.5);
  eps << 0.0;
  CHECK(reparameterize(mu, sigma, eps)[0] == 2.0);
  sigma << 0.0;
  CHECK(code_of([&] { reparameterize(mu, sigma, eps); }) == ErrorCode::domain);

  std::mt19937_64 rng(11);
  Encoding enc{Vector::Zero(1), Vector::Zero(1)};
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = sample_latent(enc, rng).z[0];
    s += z;
    s2 += z * z;
  }
  const double mean = s / n;
  CHECK(std::abs(mean) <= 0.02);
  CHECK(std::abs(s2 / n - mean * mean - 1.0) <= 0.05);
}

TEST_CASE("decode: shape, bias-only output, determinism, inference contract") {
  auto p = init_params(small_config(), 3, 4, 5, 0.5, 1.0, 2);
  const Vector z = Vector::LinSpaced(3, -0.5, 0.5);
  const auto cond = ConditionVector::make(true, 2, 5, ConditionMode::both);
  const Matrix r = decode(p, z, cond);
  CHECK(r.rows() == 3);
  CHECK(r.cols() == 4);
  CHECK(decode(p, z, cond) == r);
  CHECK(code_of([&] { decode(p, z, cond, Phase::infer); }) == ErrorCode::contract);

  for (auto& layer : p.decoder) p.store[layer.weight].setZero();
  p.store[p.decoder.back().bias] = Vector::LinSpaced(12, 0.0, 11.0);
  const Matrix c = decode(p, z, cond);
  for (Index t = 0; t < 3; ++t)
    for (Index f = 0; f < 4; ++f) CHECK(c(t, f) == static_cast<double>(t * 4 + f));
}

TEST_CASE("condition vector blocks") {
  const auto c = ConditionVector::make(false, 3, 5, ConditionMode::both);
  CHECK(c.values.size() == 8);
  CHECK(c.values.head(2).sum() == 1.0);
  CHECK(c.values.tail(6).sum() == 1.0);
  CHECK(c.values[0] == 1.0);
  CHECK(c.values[2 + 3] == 1.0);
  CHECK(ConditionVector::make(true, 0, 5, ConditionMode::labels).values.size() == 2);
  CHECK(ConditionVector::make(true, 0, 5, ConditionMode::times).values.size() == 6);
}

TEST_CASE("predict_risk: probabilities, monotone survival, uniform case") {
  std::mt19937_64 rng(3);
  auto p = init_params(small_config(), 2, 3, 6, 0.5, 1.0, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = predict_risk(p, random_record(2, 1, 2, rng));
    CHECK(std::abs(r.a_hat.sum() - 1.0) <= 1e-12);
    CHECK(r.a_hat.size() == 7);
    CHECK(r.survival[5] > 0.0);
    for (Index k = 1; k < r.survival.size(); ++k) CHECK(r.survival[k] <= r.survival[k - 1]);
    CHECK(((r.survival.array() + r.cif.array()) == 1.0).all());
  }
  p.store[p.survival_head.back().weight].setZero();
  const auto u = predict_risk(p, random_record(2, 1, 2, rng));
  for (Index k = 0; k < 6; ++k) {
    CHECK(u.a_hat[k] == doctest::Approx(1.0 / 7.0).epsilon(1e-14));
    CHECK(u.survival[k] == doctest::Approx(1.0 - (k + 1) / 7.0).epsilon(1e-13));
  }
}

TEST_CASE("batched and single-record prediction agree") {
  const auto syn = generate_synthetic(300, 3, 0.4, 3);
  const auto pre = fit_preprocessor(syn.data, 5);
  const auto prepared = preprocess(pre, syn.data);
  const auto data = to_model_data(prepared, pre.grid);
  const auto p = init_params(small_config(), data.seq_len, data.width, 5, 0.5, 1.0, 9);
  const auto batched = predict_risk(p, data);
  for (std::size_t i : {std::size_t{0}, std::size_t{150}, std::size_t{299}}) {
    const auto single = predict_risk(p, prepared.records[i]);
    CHECK((single.a_hat - batched[i].a_hat).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("survival NLL examples") {
  const std::vector<RiskEstimate> e{estimate({0.2, 0.5, 0.3})};
  auto nll = [&](int bin, int event, int window) {
    const std::vector<int> b{bin}, ev{event}, w{window};
    return loss_survival_nll(e, b, ev, w);
  };
  CHECK(nll(1, 1, kNoWindow) == doctest::Approx(0.6931).epsilon(1e-4));
  CHECK(nll(0, 0, kNoWindow) == doctest::Approx(0.2231).epsilon(1e-3));
  CHECK(nll(1, 1, 0) == doctest::Approx(0.4700).epsilon(1e-3));
  CHECK(nll(1, 1, kNoWindow) == doctest::Approx(-std::log(0.5)).epsilon(1e-15));
  CHECK(nll(1, 1, 0) == doctest::Approx(-std::log(0.5 / 0.8)).epsilon(1e-15));

  // Round trip exp(-nll) = a_hat at the event bin.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Vector a(6);
    for (Index i = 0; i < 6; ++i) a[i] = u(rng);
    a /= a.sum();
    const std::vector<RiskEstimate> one{RiskEstimate::from_probabilities(a)};
    const int bin = trial % 5;
    const std::vector<int> b{bin}, ev{1}, w{kNoWindow};
    CHECK(std::exp(-loss_survival_nll(one, b, ev, w)) == doctest::Approx(a[bin]).epsilon(1e-14));
    // Censoring in the last grid bin stays finite thanks to the extra bin.
    const std::vector<int> last{4}, cens{0};
    CHECK(std::isfinite(loss_survival_nll(one, last, cens, w)));
  }

  const std::vector<int> bad{5}, ev{1}, w{kNoWindow};
  CHECK(code_of([&] { loss_survival_nll(e, bad, ev, w); }) == ErrorCode::domain);
}

TEST_CASE("NLL never increases when mass moves to the true event bin") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Vector a(5);
    for (Index i = 0; i < 5; ++i) a[i] = u(rng);
    a /= a.sum();
    const int bin = trial % 4;
    const int window = bin == 0 ? kNoWindow : (trial % 3 == 0 ? bin - 1 : kNoWindow);
    Vector boosted = a;
    boosted[bin] += u(rng);
    boosted /= boosted.sum();
    const std::vector<int> b{bin}, ev{1}, w{window};
    const std::vector<RiskEstimate> e0{RiskEstimate::from_probabilities(a)};
    const std::vector<RiskEstimate> e1{RiskEstimate::from_probabilities(boosted)};
    CHECK(loss_survival_nll(e1, b, ev, w) <= loss_survival_nll(e0, b, ev, w) + 1e-15);
  }
}

TEST_CASE("VAE loss examples") {
  const Matrix x = Matrix::Constant(3, 2, 0.7);
  CHECK(loss_vae(x, x, Vector::Zero(4), Vector::Ones(4)) == 0.0);
  CHECK(loss_vae(x, x, Vector::Ones(4), Vector::Ones(4)) == doctest::Approx(2.0).epsilon(1e-15));
  const Matrix r = Matrix::Zero(3, 2);
  CHECK(loss_vae(x, r, Vector::Zero(1), Vector::Ones(1)) == doctest::Approx(0.49).epsilon(1e-14));
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.05, 3.0), m(-2.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    Vector mu(3), sg(3);
    for (Index i = 0; i < 3; ++i) {
      mu[i] = m(rng);
      sg[i] = u(rng);
    }
    CHECK(loss_vae(x, x, mu, sg) >= 0.0);
  }
  CHECK(code_of([&] { loss_vae(x, x, Vector::Zero(1), Vector::Zero(1)); }) == ErrorCode::domain);
}

TEST_CASE("total loss and interpolation") {
  CHECK(loss_total(2.0, 4.0, 1.0) == 2.0);
  CHECK(loss_total(2.0, 4.0, 0.0) == 4.0);
  CHECK(loss_total(2.0, 4.0, 0.5) == 3.0);
  CHECK(code_of([] { loss_total(1.0, 1.0, 1.5); }) == ErrorCode::domain);

  const auto g = make_time_grid(3, 3.0);
  const auto e = estimate({0.1, 0.2, 0.2, 0.5});
  CHECK(interpolate_survival(e, g, 0.0) == 1.0);
  CHECK(interpolate_survival(e, g, 1.0) == e.survival[0]);
  CHECK(interpolate_survival(e, g, 2.0) == e.survival[1]);
  CHECK(interpolate_survival(e, g, 3.0) == e.survival[2]);
  CHECK(interpolate_survival(estimate({0.1, 0.2, 0.2, 0.5}), g, 1.5) == doctest::Approx(0.8));
  const auto half = estimate({0.1, 0.2, 0.0, 0.7});
  CHECK(interpolate_survival(half, g, 1.5) == doctest::Approx(0.8).epsilon(1e-15));
  double prev = 1.0;
  for (double t = 0.0; t <= 3.0; t += 0.01) {
    const double s = interpolate_survival(e, g, t);
    CHECK(s <= prev);
    prev = s;
  }
  CHECK(code_of([&] { interpolate_survival(e, g, 3.5); }) == ErrorCode::domain);
}

TEST_CASE("full objective gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelCheckConfig c;
    c.seed = seed;
    const auto r = check_model_gradients(c);
    CHECK(r.max_rel_error < 1e-5);
    CHECK(r.coordinates > 100);
  }
  ModelCheckConfig s;
  s.seq_len = 1;
  s.alpha = 0.2;
  CHECK(check_model_gradients(s).max_rel_error < 1e-5);
}

TEST_CASE("alpha = 1 with a deterministic latent leaves the VAE branch without gradient") {
  const auto syn = generate_synthetic(64, 3, 0.4, 2);
  const auto pre = fit_preprocessor(syn.data, 5);
  const auto data = prepare_model_data(pre, syn.data);
  const auto p = init_params(small_config(), data.seq_len, data.width, 5, 1.0, 1.0, 3,
                             LatentMode::deterministic);
  ad::Tape tape;
  std::mt19937_64 rng(0);
  const auto loss = graph::batch_loss(tape, p, data, Phase::train, rng);
  const auto g = tape.backward(loss.total, p.store);
  for (const auto& layer : p.decoder) {
    CHECK(g[layer.weight].isZero());
    CHECK(g[layer.bias].isZero());
  }
  CHECK(g[p.logvar_head.weight].isZero());
  CHECK_FALSE(g[p.mu_head.weight].isZero());
  CHECK(loss.total.scalar() == loss.l1.scalar());
}

TEST_CASE("batch loss refuses the inference phase") {
  const auto syn = generate_synthetic(20, 2, 0.4, 2);
  const auto pre = fit_preprocessor(syn.data, 5);
  const auto data = prepare_model_data(pre, syn.data);
  const auto p = init_params(small_config(), data.seq_len, data.width, 5, 0.5, 1.0, 3);
  ad::Tape tape;
  std::mt19937_64 rng(0);
  CHECK(code_of([&] { graph::batch_loss(tape, p, data, Phase::infer, rng); }) == ErrorCode::contract);
}
