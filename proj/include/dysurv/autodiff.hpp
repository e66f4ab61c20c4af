#pragma once

// Reverse-mode differentiation over dense matrices. Every node of a Tape holds
// an Eigen matrix; a minibatch is laid out with one subject per column.

#include "dysurv/types.hpp"

#include <random>
#include <string>
#include <vector>

namespace dysurv::ad {

struct ParamId {
  std::size_t index = 0;
  friend bool operator==(ParamId, ParamId) = default;
};

/// Named learnable matrices, in registration order.
class ParamStore {
 public:
  ParamId add(std::string name, Matrix value);

  Matrix& operator[](ParamId id) { return values_[id.index]; }
  const Matrix& operator[](ParamId id) const { return values_[id.index]; }
  const std::string& name(ParamId id) const { return names_[id.index]; }
  std::size_t size() const { return values_.size(); }
  /// Total number of scalar parameters.
  Index scalar_count() const;
  ParamId find(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

/// Gradient of a scalar loss, one matrix per parameter (zero when the
/// parameter is not reachable from the loss).
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParamStore& params);

  Matrix& operator[](ParamId id) { return grads_[id.index]; }
  const Matrix& operator[](ParamId id) const { return grads_[id.index]; }
  std::size_t size() const { return grads_.size(); }
  double squared_norm() const;
  bool all_finite() const;
  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double s);

 private:
  std::vector<Matrix> grads_;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
};

enum class Op {
  constant,
  param,
  matmul,
  add,
  sub,
  add_bias,
  mul,
  affine,
  sigmoid,
  tanh,
  exp,
  log,
  softmax,
  dropout,
  sum,
  sum_rows,
  mean,
  square,
  clamp,
  concat_rows,
};

const char* op_name(Op op);

class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf referencing a parameter; the store must outlive the tape.
  Var param(const ParamStore& params, ParamId id);

  std::size_t size() const { return nodes_.size(); }
  const Matrix& value(int id) const;

  /// Gradients of the scalar `loss` with respect to every parameter of
  /// `params`. The tape is not modified, so repeated calls agree exactly.
  Gradients backward(Var loss, const ParamStore& params) const;

  /// Appends a primitive application; used by the free functions below.
  Var record(Op op, int a, int b, Matrix value, double s0 = 0.0, double s1 = 0.0,
             Matrix aux = {});

 private:
  struct Node {
    Op op = Op::constant;
    int a = -1;
    int b = -1;
    Matrix value;
    const Matrix* ref = nullptr;  // parameter leaves alias the store
    Matrix aux;                   // dropout mask
    double s0 = 0.0;
    double s1 = 0.0;
    std::size_t param = 0;
  };

  const Matrix& val(const Node& n) const { return n.ref ? *n.ref : n.value; }

  std::vector<Node> nodes_;
};

inline Gradients backward(const Tape& tape, Var loss, const ParamStore& params) {
  return tape.backward(loss, params);
}

// Primitives. Shape mismatches throw E_SHAPE; a non-finite result throws
// E_NUMERICAL naming the primitive.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// x (r x c) plus column vector b (r x 1) broadcast over columns.
Var add_bias(Var x, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
/// scale * x + shift, elementwise.
Var affine(Var x, double scale, double shift = 0.0);
Var sigmoid(Var x);
Var tanh(Var x);
Var exp(Var x);
/// Throws E_DOMAIN on a nonpositive entry.
Var log(Var x);
/// Column-wise softmax.
Var softmax(Var x);
/// Inverted dropout: keeps each entry with probability `keep` and rescales by
/// 1/keep. Identity when `training` is false.
Var dropout(Var x, double keep, std::mt19937_64& rng, bool training);
/// Sum of all entries (1 x 1).
Var sum(Var x);
/// Column sums (1 x c).
Var sum_rows(Var x);
/// Mean of all entries (1 x 1).
Var mean(Var x);
Var square(Var x);
/// Elementwise clamp; gradient passes only where lo <= x <= hi.
Var clamp(Var x, double lo, double hi);
Var concat_rows(Var top, Var bottom);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

}  // namespace dysurv::ad
