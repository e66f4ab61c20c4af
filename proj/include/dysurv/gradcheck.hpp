#pragma once

#include "dysurv/autodiff.hpp"
#include "dysurv/model.hpp"

#include <cstdint>
#include <functional>
#include <string>

namespace dysurv {

/// Builds a scalar loss on `tape` from `params`. Must be deterministic.
using LossBuilder = std::function<ad::Var(ad::Tape& tape, const ad::ParamStore& params)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = 0;
  Index coordinates = 0;
};

/// Compares reverse-mode gradients with central differences
/// (f(θ+eps) - f(θ-eps)) / (2 eps) on every coordinate. Relative error is
/// |a - n| / max(1e-8, |a| + |n|).
///
/// Throws E_DOMAIN for eps outside [1e-7, 1e-3] and E_REPRODUCIBILITY when two
/// evaluations at the same point disagree.
GradCheckReport finite_difference_check(const LossBuilder& loss,
                                        const ad::ParamStore& params, double eps);

/// Small random DySurv problem for checking the full objective.
struct ModelCheckConfig {
  Index hidden = 4;
  Index z_dim = 3;
  int k_bins = 5;
  Index batch = 4;
  Index seq_len = 3;
  Index width = 3;
  double alpha = 0.5;
  double eps = 1e-4;
  std::uint64_t seed = 0;
};

/// Gradient check of the total loss with dropout off and the latent noise
/// held fixed.
GradCheckReport check_model_gradients(const ModelCheckConfig& config);

}  // namespace dysurv
