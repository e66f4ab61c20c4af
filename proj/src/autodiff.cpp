#include "dysurv/autodiff.hpp"

#include "dysurv/error.hpp"

#include <cmath>

namespace dysurv::ad {

// ---------------------------------------------------------------------------
// Parameters and gradients

ParamId ParamStore::add(std::string name, Matrix value) {
  for (const auto& n : names_) {
    if (n == name) throw Error(ErrorCode::contract, "duplicate parameter '" + name + "'");
  }
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return ParamId{values_.size() - 1};
}

Index ParamStore::scalar_count() const {
  Index n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

ParamId ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return ParamId{i};
  }
  throw Error(ErrorCode::contract, "unknown parameter '" + name + "'");
}

Gradients::Gradients(const ParamStore& params) {
  grads_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[ParamId{i}];
    grads_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& g : grads_) s += g.squaredNorm();
  return s;
}

bool Gradients::all_finite() const {
  for (const auto& g : grads_) {
    if (!g.allFinite()) return false;
  }
  return true;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  if (other.grads_.size() != grads_.size()) {
    throw Error(ErrorCode::shape, "gradient stores of different sizes");
  }
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
  return *this;
}

Gradients& Gradients::operator*=(double s) {
  for (auto& g : grads_) g *= s;
  return *this;
}

// ---------------------------------------------------------------------------
// Tape

const char* op_name(Op op) {
  switch (op) {
    case Op::constant: return "constant";
    case Op::param: return "param";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::add_bias: return "add_bias";
    case Op::mul: return "mul";
    case Op::affine: return "affine";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::softmax: return "softmax";
    case Op::dropout: return "dropout";
    case Op::sum: return "sum";
    case Op::sum_rows: return "sum_rows";
    case Op::mean: return "mean";
    case Op::square: return "square";
    case Op::clamp: return "clamp";
    case Op::concat_rows: return "concat_rows";
  }
  return "?";
}

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw Error(ErrorCode::contract, "value is not a scalar");
  return v(0, 0);
}

const Matrix& Tape::value(int id) const {
  return val(nodes_[static_cast<std::size_t>(id)]);
}

Var Tape::constant(Matrix value) {
  if (!value.allFinite()) throw Error(ErrorCode::numerical, "non-finite constant");
  Node n;
  n.op = Op::constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(const ParamStore& params, ParamId id) {
  Node n;
  n.op = Op::param;
  n.ref = &params[id];
  n.param = id.index;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Op op, int a, int b, Matrix value, double s0, double s1, Matrix aux) {
  if (!std::isfinite(value.sum())) {
    throw Error(ErrorCode::numerical,
                std::string("non-finite value produced by ") + op_name(op));
  }
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.value = std::move(value);
  n.s0 = s0;
  n.s1 = s1;
  n.aux = std::move(aux);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

namespace {

void accumulate(std::vector<Matrix>& adj, int id, const Matrix& g) {
  auto& slot = adj[static_cast<std::size_t>(id)];
  if (slot.size() == 0) {
    slot = g;
  } else {
    slot += g;
  }
}

}  // namespace

Gradients Tape::backward(Var loss, const ParamStore& params) const {
  if (loss.tape != this) throw Error(ErrorCode::contract, "loss belongs to another tape");
  const auto& lv = value(loss.id);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw Error(ErrorCode::contract, "backward needs a scalar loss");
  }
  Gradients grads(params);
  std::vector<Matrix> adj(static_cast<std::size_t>(loss.id) + 1);
  adj[static_cast<std::size_t>(loss.id)] = Matrix::Ones(1, 1);

  for (int id = loss.id; id >= 0; --id) {
    const Matrix& g = adj[static_cast<std::size_t>(id)];
    if (g.size() == 0) continue;
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const Matrix& y = val(n);
    switch (n.op) {
      case Op::constant:
        break;
      case Op::param:
        if (n.param >= grads.size()) {
          throw Error(ErrorCode::contract, "parameter leaf from a different store");
        }
        grads[ParamId{n.param}] += g;
        break;
      case Op::matmul:
        accumulate(adj, n.a, g * value(n.b).transpose());
        accumulate(adj, n.b, value(n.a).transpose() * g);
        break;
      case Op::add:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, g);
        break;
      case Op::sub:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, -g);
        break;
      case Op::add_bias:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, g.rowwise().sum());
        break;
      case Op::mul:
        accumulate(adj, n.a, g.cwiseProduct(value(n.b)));
        accumulate(adj, n.b, g.cwiseProduct(value(n.a)));
        break;
      case Op::affine:
        accumulate(adj, n.a, n.s0 * g);
        break;
      case Op::sigmoid:
        accumulate(adj, n.a, g.array() * y.array() * (1.0 - y.array()));
        break;
      case Op::tanh:
        accumulate(adj, n.a, g.array() * (1.0 - y.array().square()));
        break;
      case Op::exp:
        accumulate(adj, n.a, g.cwiseProduct(y));
        break;
      case Op::log:
        accumulate(adj, n.a, g.cwiseQuotient(value(n.a)));
        break;
      case Op::softmax: {
        const RowVector dot = g.cwiseProduct(y).colwise().sum();
        accumulate(adj, n.a, y.cwiseProduct(g - dot.replicate(g.rows(), 1)));
        break;
      }
      case Op::dropout:
        accumulate(adj, n.a, g.cwiseProduct(n.aux));
        break;
      case Op::sum: {
        const auto& x = value(n.a);
        accumulate(adj, n.a, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
        break;
      }
      case Op::sum_rows:
        accumulate(adj, n.a, g.replicate(value(n.a).rows(), 1));
        break;
      case Op::mean: {
        const auto& x = value(n.a);
        accumulate(adj, n.a,
                   Matrix::Constant(x.rows(), x.cols(),
                                    g(0, 0) / static_cast<double>(x.size())));
        break;
      }
      case Op::square:
        accumulate(adj, n.a, 2.0 * g.cwiseProduct(value(n.a)));
        break;
      case Op::clamp: {
        const auto& x = value(n.a);
        const auto inside = (x.array() >= n.s0 && x.array() <= n.s1).cast<double>();
        accumulate(adj, n.a, (g.array() * inside).matrix());
        break;
      }
      case Op::concat_rows: {
        const Index top = value(n.a).rows();
        accumulate(adj, n.a, g.topRows(top));
        accumulate(adj, n.b, g.bottomRows(g.rows() - top));
        break;
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

Tape& tape_of(Var a) {
  if (!a.tape) throw Error(ErrorCode::contract, "variable is not on a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape || !a.tape) {
    throw Error(ErrorCode::contract, "variables belong to different tapes");
  }
  return *a.tape;
}

void same_shape(Var a, Var b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::shape,
                std::string(what) + ": shape mismatch " + std::to_string(a.rows()) +
                    "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                    "x" + std::to_string(b.cols()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  auto& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::shape, "matmul: inner dimensions " + std::to_string(a.cols()) +
                                      " and " + std::to_string(b.rows()));
  }
  Matrix v = a.value() * b.value();
  return t.record(Op::matmul, a.id, b.id, std::move(v));
}

Var add(Var a, Var b) {
  auto& t = tape_of(a, b);
  same_shape(a, b, "add");
  return t.record(Op::add, a.id, b.id, a.value() + b.value());
}

Var sub(Var a, Var b) {
  auto& t = tape_of(a, b);
  same_shape(a, b, "sub");
  return t.record(Op::sub, a.id, b.id, a.value() - b.value());
}

Var add_bias(Var x, Var b) {
  auto& t = tape_of(x, b);
  if (b.cols() != 1 || b.rows() != x.rows()) {
    throw Error(ErrorCode::shape, "add_bias: bias must be a column matching the rows of x");
  }
  Matrix v = x.value().colwise() + b.value().col(0);
  return t.record(Op::add_bias, x.id, b.id, std::move(v));
}

Var mul(Var a, Var b) {
  auto& t = tape_of(a, b);
  same_shape(a, b, "mul");
  return t.record(Op::mul, a.id, b.id, a.value().cwiseProduct(b.value()));
}

Var affine(Var x, double scale, double shift) {
  auto& t = tape_of(x);
  Matrix v = (scale * x.value().array() + shift).matrix();
  return t.record(Op::affine, x.id, -1, std::move(v), scale, shift);
}

Var sigmoid(Var x) {
  auto& t = tape_of(x);
  Matrix v = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  return t.record(Op::sigmoid, x.id, -1, std::move(v));
}

Var tanh(Var x) {
  auto& t = tape_of(x);
  Matrix v = (1.0 - 2.0 / ((2.0 * x.value().array()).exp() + 1.0)).matrix();
  return t.record(Op::tanh, x.id, -1, std::move(v));
}

Var exp(Var x) {
  auto& t = tape_of(x);
  return t.record(Op::exp, x.id, -1, x.value().array().exp().matrix());
}

Var log(Var x) {
  auto& t = tape_of(x);
  if ((x.value().array() <= 0.0).any()) {
    throw Error(ErrorCode::domain, "log of a nonpositive value");
  }
  return t.record(Op::log, x.id, -1, x.value().array().log().matrix());
}

Var softmax(Var x) {
  auto& t = tape_of(x);
  const auto& v = x.value();
  const RowVector peak = v.colwise().maxCoeff();
  Matrix e = (v - peak.replicate(v.rows(), 1)).array().exp().matrix();
  const RowVector total = e.colwise().sum();
  e.array().rowwise() /= total.array();
  return t.record(Op::softmax, x.id, -1, std::move(e));
}

Var dropout(Var x, double keep, std::mt19937_64& rng, bool training) {
  if (!(keep > 0.0 && keep <= 1.0)) {
    throw Error(ErrorCode::domain, "dropout keep probability must lie in (0, 1]");
  }
  if (!training || keep == 1.0) return x;
  auto& t = tape_of(x);
  std::bernoulli_distribution coin(keep);
  Matrix mask(x.rows(), x.cols());
  for (Index j = 0; j < mask.cols(); ++j)
    for (Index i = 0; i < mask.rows(); ++i) mask(i, j) = coin(rng) ? 1.0 / keep : 0.0;
  Matrix v = x.value().cwiseProduct(mask);
  return t.record(Op::dropout, x.id, -1, std::move(v), keep, 0.0, std::move(mask));
}

Var sum(Var x) {
  auto& t = tape_of(x);
  return t.record(Op::sum, x.id, -1, Matrix::Constant(1, 1, x.value().sum()));
}

Var sum_rows(Var x) {
  auto& t = tape_of(x);
  return t.record(Op::sum_rows, x.id, -1, x.value().colwise().sum());
}

Var mean(Var x) {
  auto& t = tape_of(x);
  if (x.value().size() == 0) throw Error(ErrorCode::shape, "mean of an empty matrix");
  return t.record(Op::mean, x.id, -1, Matrix::Constant(1, 1, x.value().mean()));
}

Var square(Var x) {
  auto& t = tape_of(x);
  return t.record(Op::square, x.id, -1, x.value().array().square().matrix());
}

Var clamp(Var x, double lo, double hi) {
  auto& t = tape_of(x);
  Matrix v = x.value().cwiseMax(lo).cwiseMin(hi);
  return t.record(Op::clamp, x.id, -1, std::move(v), lo, hi);
}

Var concat_rows(Var top, Var bottom) {
  auto& t = tape_of(top, bottom);
  if (top.cols() != bottom.cols()) {
    throw Error(ErrorCode::shape, "concat_rows: column counts differ");
  }
  Matrix v(top.rows() + bottom.rows(), top.cols());
  v.topRows(top.rows()) = top.value();
  v.bottomRows(bottom.rows()) = bottom.value();
  return t.record(Op::concat_rows, top.id, bottom.id, std::move(v));
}

}  // namespace dysurv::ad
