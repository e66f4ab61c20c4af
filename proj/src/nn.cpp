#include "dysurv/nn.hpp"

#include "dysurv/error.hpp"

#include <cmath>

namespace dysurv::nn {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  for (auto a : {Activation::identity, Activation::sigmoid, Activation::tanh,
                 Activation::softmax}) {
    if (name == activation_name(a)) return a;
  }
  throw Error(ErrorCode::parse, "unknown activation '" + name + "'");
}

namespace {

Matrix glorot(Index rows, Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix w(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) w(i, j) = u(rng);
  return w;
}

GateParams make_gate(ParamStore& params, const std::string& name, Index in, Index hidden,
                     double bias, std::mt19937_64& rng) {
  GateParams g;
  g.input_weight = params.add(name + ".W", glorot(hidden, in, rng));
  g.recurrent_weight = params.add(name + ".U", glorot(hidden, hidden, rng));
  g.bias = params.add(name + ".b", Matrix::Constant(hidden, 1, bias));
  return g;
}

Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::sigmoid: return ad::sigmoid(x);
    case Activation::tanh: return ad::tanh(x);
    case Activation::softmax: return ad::softmax(x);
  }
  return x;
}

// Gate pre-activation W x (+ U h) + b; the recurrent term is skipped while
// the hidden state is still the zero initial state.
Var gate(Tape& tape, const ParamStore& params, const GateParams& g, Var x, const Var* h) {
  Var pre = ad::matmul(tape.param(params, g.input_weight), x);
  if (h) pre = pre + ad::matmul(tape.param(params, g.recurrent_weight), *h);
  return ad::add_bias(pre, tape.param(params, g.bias));
}

}  // namespace

DenseLayerParams make_dense(ParamStore& params, const std::string& name, Index in,
                            Index out, Activation activation, std::mt19937_64& rng) {
  DenseLayerParams layer;
  layer.weight = params.add(name + ".W", glorot(out, in, rng));
  layer.bias = params.add(name + ".b", Matrix::Zero(out, 1));
  layer.activation = activation;
  layer.in = in;
  layer.out = out;
  return layer;
}

Var dense_forward(Tape& tape, const ParamStore& params, const DenseLayerParams& layer,
                  Var x) {
  if (x.rows() != layer.in) {
    throw Error(ErrorCode::shape, "dense layer expects " + std::to_string(layer.in) +
                                      " inputs, got " + std::to_string(x.rows()));
  }
  Var pre = ad::add_bias(ad::matmul(tape.param(params, layer.weight), x),
                         tape.param(params, layer.bias));
  return activate(pre, layer.activation);
}

LSTMCellParams make_lstm(ParamStore& params, const std::string& name, Index input_size,
                         Index hidden_size, std::mt19937_64& rng) {
  LSTMCellParams cell;
  cell.input_size = input_size;
  cell.hidden_size = hidden_size;
  cell.input = make_gate(params, name + ".input", input_size, hidden_size, 0.0, rng);
  cell.forget = make_gate(params, name + ".forget", input_size, hidden_size, 1.0, rng);
  cell.output = make_gate(params, name + ".output", input_size, hidden_size, 0.0, rng);
  cell.candidate = make_gate(params, name + ".candidate", input_size, hidden_size, 0.0, rng);
  return cell;
}

Var lstm_sequence(Tape& tape, const ParamStore& params, const LSTMCellParams& cell,
                  std::span<const Var> steps) {
  if (steps.empty()) throw Error(ErrorCode::shape, "LSTM needs at least one time step");
  Var h{}, c{};
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const Var x = steps[t];
    if (x.rows() != cell.input_size) {
      throw Error(ErrorCode::shape, "LSTM expects " + std::to_string(cell.input_size) +
                                        " inputs per step, got " + std::to_string(x.rows()));
    }
    const Var* prev = t == 0 ? nullptr : &h;
    const Var i = ad::sigmoid(gate(tape, params, cell.input, x, prev));
    const Var o = ad::sigmoid(gate(tape, params, cell.output, x, prev));
    const Var g = ad::tanh(gate(tape, params, cell.candidate, x, prev));
    Var next_c = ad::mul(i, g);
    if (t > 0) {
      const Var f = ad::sigmoid(gate(tape, params, cell.forget, x, prev));
      next_c = ad::mul(f, c) + next_c;
    }
    c = next_c;
    h = ad::mul(o, ad::tanh(c));
  }
  return h;
}

}  // namespace dysurv::nn
