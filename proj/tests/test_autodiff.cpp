#include "dysurv/autodiff.hpp"
#include "dysurv/error.hpp"
#include "dysurv/gradcheck.hpp"
#include "dysurv/nn.hpp"

#include "doctest.h"

#include <functional>
#include <random>

using namespace dysurv;
using namespace dysurv::ad;

namespace {

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Scalar head that mixes every entry of x so that each input coordinate has a
// distinct gradient.
Var scalar_head(Tape& tape, Var x, std::mt19937_64& rng) {
  const Matrix w = random_matrix(x.rows(), x.cols(), rng);
  return sum(mul(x, tape.constant(w)));
}

double check_unary(const std::function<Var(Var)>& op, Index r, Index c, std::uint64_t seed,
                   double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  ParamStore store;
  const auto a = store.add("a", random_matrix(r, c, rng, lo, hi));
  const std::uint64_t head_seed = rng();
  auto loss = [&](Tape& tape, const ParamStore& p) {
    std::mt19937_64 h(head_seed);
    return scalar_head(tape, op(tape.param(p, a)), h);
  };
  return finite_difference_check(loss, store, 1e-5).max_rel_error;
}

double check_binary(const std::function<Var(Var, Var)>& op, Index ra, Index ca, Index rb, Index cb,
                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore store;
  const auto a = store.add("a", random_matrix(ra, ca, rng));
  const auto b = store.add("b", random_matrix(rb, cb, rng));
  const std::uint64_t head_seed = rng();
  auto loss = [&](Tape& tape, const ParamStore& p) {
    std::mt19937_64 h(head_seed);
    return scalar_head(tape, op(tape.param(p, a), tape.param(p, b)), h);
  };
  return finite_difference_check(loss, store, 1e-5).max_rel_error;
}

}  // namespace

TEST_CASE("primitive forward values") {
  Tape tape;
  CHECK(sigmoid(tape.constant(Matrix::Zero(1, 1))).scalar() == 0.5);
  const Var sm = softmax(tape.constant(Matrix::Constant(3, 1, 2.7)));
  for (Index i = 0; i < 3; ++i) CHECK(sm.value()(i, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  std::mt19937_64 rng(1);
  const Matrix a = random_matrix(3, 4, rng);
  CHECK(matmul(tape.constant(Matrix::Identity(3, 3)), tape.constant(a)).value() == a);
  CHECK(mean(tape.constant(a)).scalar() == doctest::Approx(a.mean()));
  CHECK(sum_rows(tape.constant(a)).value().isApprox(a.colwise().sum()));
  CHECK(clamp(tape.constant(a), -0.1, 0.1).value().maxCoeff() <= 0.1);
  CHECK(concat_rows(tape.constant(a), tape.constant(a)).rows() == 6);
}

TEST_CASE("primitive shape and domain errors") {
  Tape tape;
  const Var a = tape.constant(Matrix::Ones(2, 3));
  const Var b = tape.constant(Matrix::Ones(2, 2));
  auto code = [](const std::function<void()>& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::usage;
  };
  CHECK(code([&] { matmul(a, a); }) == ErrorCode::shape);
  CHECK(code([&] { add(a, b); }) == ErrorCode::shape);
  CHECK(code([&] { log(tape.constant(Matrix::Zero(1, 1))); }) == ErrorCode::domain);
  CHECK(code([&] { exp(tape.constant(Matrix::Constant(1, 1, 1e6))); }) == ErrorCode::numerical);
}

TEST_CASE("softmax columns are probability vectors") {
  std::mt19937_64 rng(3);
  Tape tape;
  for (int trial = 0; trial < 50; ++trial) {
    const Var s = softmax(tape.constant(random_matrix(7, 5, rng, -30.0, 30.0)));
    CHECK(s.value().minCoeff() >= 0.0);
    for (Index j = 0; j < 5; ++j) CHECK(std::abs(s.value().col(j).sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("dropout: identity in evaluation, inverted scaling in training") {
  std::mt19937_64 rng(4);
  Tape tape;
  const Matrix x = random_matrix(50, 40, rng);
  CHECK(dropout(tape.constant(x), 0.7, rng, false).value() == x);
  const Matrix y = dropout(tape.constant(Matrix::Ones(200, 200)), 0.7, rng, true).value();
  for (Index i = 0; i < y.size(); ++i) {
    const double v = y.data()[i];
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.7) < 1e-15));
  }
  CHECK(y.mean() == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("backward: analytic examples and purity") {
  ParamStore store;
  Matrix w(2, 1);
  w << 1.0, 2.0;
  const auto id = store.add("w", w);
  const auto unused = store.add("unused", Matrix::Ones(3, 3));
  Tape tape;
  const Var loss = sum(square(tape.param(store, id)));
  const auto g1 = backward(tape, loss, store);
  CHECK(g1[id](0, 0) == 2.0);
  CHECK(g1[id](1, 0) == 4.0);
  CHECK(g1[unused].isZero());
  const auto g2 = backward(tape, loss, store);
  CHECK(g1[id] == g2[id]);
}

TEST_CASE("finite_difference_check: exact cases and eps range") {
  ParamStore store;
  const auto w = store.add("w", Matrix::Constant(1, 1, 3.0));
  auto quad = [&](Tape& tape, const ParamStore& p) { return sum(square(tape.param(p, w))); };
  CHECK(finite_difference_check(quad, store, 1e-5).max_rel_error < 1e-8);
  auto lin = [&](Tape& tape, const ParamStore& p) { return affine(sum(tape.param(p, w)), 2.5, 1.0); };
  CHECK(finite_difference_check(lin, store, 1e-5).max_rel_error < 1e-9);
  try {
    finite_difference_check(quad, store, 1e-2);
    FAIL("eps out of range accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::domain);
  }
}

TEST_CASE("every primitive's gradient matches central differences (100 trials)") {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    worst = std::max(worst, check_binary([](Var a, Var b) { return matmul(a, b); }, 3, 4, 4, 2, s));
    worst = std::max(worst, check_binary([](Var a, Var b) { return add(a, b); }, 3, 2, 3, 2, s));
    worst = std::max(worst, check_binary([](Var a, Var b) { return sub(a, b); }, 3, 2, 3, 2, s));
    worst = std::max(worst, check_binary([](Var a, Var b) { return mul(a, b); }, 3, 2, 3, 2, s));
    worst = std::max(worst, check_binary([](Var a, Var b) { return add_bias(a, b); }, 3, 4, 3, 1, s));
    worst = std::max(worst, check_binary([](Var a, Var b) { return concat_rows(a, b); }, 2, 3, 1, 3, s));
    worst = std::max(worst, check_unary([](Var a) { return sigmoid(a); }, 3, 3, s));
    worst = std::max(worst, check_unary([](Var a) { return tanh(a); }, 3, 3, s));
    worst = std::max(worst, check_unary([](Var a) { return exp(a); }, 3, 3, s));
    worst = std::max(worst, check_unary([](Var a) { return log(a); }, 3, 3, s, 0.5, 2.0));
    worst = std::max(worst, check_unary([](Var a) { return softmax(a); }, 4, 3, s));
    worst = std::max(worst, check_unary([](Var a) { return sum(a); }, 3, 3, s));
    worst = std::max(worst, check_unary([](Var a) { return sum_rows(a); }, 3, 3, s));
    worst = std::max(worst, check_unary([](Var a) { return mean(a); }, 3, 3, s));
    worst = std::max(worst, check_unary([](Var a) { return square(a); }, 3, 3, s));
    worst = std::max(worst, check_unary([](Var a) { return affine(a, -1.7, 0.3); }, 3, 3, s));
    worst = std::max(worst, check_unary([](Var a) { return clamp(a, -2.0, 2.0); }, 3, 3, s));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("dropout gradient with a fixed mask") {
  std::mt19937_64 rng(8);
  ParamStore store;
  const auto a = store.add("a", random_matrix(4, 5, rng));
  auto loss = [&](Tape& tape, const ParamStore& p) {
    std::mt19937_64 r(42);
    std::mt19937_64 h(7);
    return scalar_head(tape, dropout(tape.param(p, a), 0.6, r, true), h);
  };
  CHECK(finite_difference_check(loss, store, 1e-5).max_rel_error < 1e-6);
}

TEST_CASE("dense layer degenerate cases") {
  ParamStore store;
  std::mt19937_64 rng(1);
  auto layer = nn::make_dense(store, "d", 3, 3, nn::Activation::identity, rng);
  store[layer.weight] = Matrix::Identity(3, 3);
  const Matrix x = random_matrix(3, 2, rng);
  Tape tape;
  CHECK(nn::dense_forward(tape, store, layer, tape.constant(x)).value() == x);

  auto sig = nn::make_dense(store, "s", 3, 4, nn::Activation::sigmoid, rng);
  store[sig.weight].setZero();
  CHECK((nn::dense_forward(tape, store, sig, tape.constant(x)).value().array() == 0.5).all());

  auto soft = nn::make_dense(store, "p", 3, 5, nn::Activation::softmax, rng);
  const Matrix p = nn::dense_forward(tape, store, soft, tape.constant(x)).value();
  for (Index j = 0; j < p.cols(); ++j) CHECK(std::abs(p.col(j).sum() - 1.0) <= 1e-12);

  const double bound = std::sqrt(6.0 / 8.0);
  CHECK(store[soft.weight].cwiseAbs().maxCoeff() <= bound);
  CHECK(store[soft.bias].isZero());
}

TEST_CASE("lstm: zero fixed point, single step, gradients") {
  std::mt19937_64 rng(2);
  ParamStore store;
  auto cell = nn::make_lstm(store, "lstm", 3, 4, rng);
  CHECK((store[cell.forget.bias].array() == 1.0).all());
  CHECK(store[cell.input.bias].isZero());

  ParamStore zero = store;
  for (std::size_t i = 0; i < zero.size(); ++i) zero[ParamId{i}].setZero();
  {
    Tape tape;
    std::vector<Var> steps{tape.constant(random_matrix(3, 2, rng)), tape.constant(random_matrix(3, 2, rng))};
    CHECK(nn::lstm_sequence(tape, zero, cell, steps).value().isZero());
  }

  // J = 1 against a hand-written cell step from h = c = 0.
  {
    const Matrix x = random_matrix(3, 2, rng);
    Tape tape;
    std::vector<Var> steps{tape.constant(x)};
    const Matrix h = nn::lstm_sequence(tape, store, cell, steps).value();
    auto gate = [&](const nn::GateParams& g) {
      return Matrix((store[g.input_weight] * x).colwise() + Vector(store[g.bias].col(0)));
    };
    auto sig = [](const Matrix& m) { return Matrix((1.0 + (-m.array()).exp()).inverse()); };
    const Matrix i = sig(gate(cell.input));
    const Matrix o = sig(gate(cell.output));
    const Matrix g = gate(cell.candidate).array().tanh();
    const Matrix c = i.cwiseProduct(g);
    const Matrix expect = o.array() * c.array().tanh();
    CHECK((h - expect).cwiseAbs().maxCoeff() < 1e-14);
  }

  const Matrix x0 = random_matrix(3, 2, rng), x1 = random_matrix(3, 2, rng), x2 = random_matrix(3, 2, rng);
  auto loss = [&](Tape& tape, const ParamStore& p) {
    std::vector<Var> steps{tape.constant(x0), tape.constant(x1), tape.constant(x2)};
    std::mt19937_64 h(5);
    return scalar_head(tape, nn::lstm_sequence(tape, p, cell, steps), h);
  };
  CHECK(finite_difference_check(loss, store, 1e-5).max_rel_error < 1e-5);
}
