#pragma once

#include "dysurv/autodiff.hpp"

#include <random>
#include <span>
#include <string>

namespace dysurv::nn {

using ad::ParamId;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

enum class Activation { identity, sigmoid, tanh, softmax };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

struct DenseLayerParams {
  ParamId weight;  // out x in
  ParamId bias;    // out x 1
  Activation activation = Activation::identity;
  Index in = 0;
  Index out = 0;
};

/// Glorot-uniform weights, zero bias.
DenseLayerParams make_dense(ParamStore& params, const std::string& name, Index in,
                            Index out, Activation activation, std::mt19937_64& rng);

/// activation(W x + b) for x of shape in x batch.
Var dense_forward(Tape& tape, const ParamStore& params, const DenseLayerParams& layer,
                  Var x);

struct GateParams {
  ParamId input_weight;      // H x D_in
  ParamId recurrent_weight;  // H x H
  ParamId bias;              // H x 1
};

struct LSTMCellParams {
  GateParams input;
  GateParams forget;
  GateParams output;
  GateParams candidate;
  Index input_size = 0;
  Index hidden_size = 0;
};

/// Glorot-uniform weights, zero biases except the forget gate (1).
LSTMCellParams make_lstm(ParamStore& params, const std::string& name, Index input_size,
                         Index hidden_size, std::mt19937_64& rng);

/// Runs the cell over `steps` (each D_in x batch) from h = c = 0 and returns
/// the final hidden state (H x batch).
Var lstm_sequence(Tape& tape, const ParamStore& params, const LSTMCellParams& cell,
                  std::span<const Var> steps);

}  // namespace dysurv::nn
