#pragma once

#include <string>

#include "tmmoe/autodiff.hpp"

namespace tmmoe {

/// Parameter names of the learnable log-variances s = log(sigma^2).
inline const std::string kLogVarClassification = "loss.s_c";
inline const std::string kLogVarLongitudinal = "loss.s_r1";
inline const std::string kLogVarLateral = "loss.s_r2";

/// Adds the three log-variances to `params`, initialised to 0 (sigma = 1).
void init_uncertainty(NamedTensors& params);

struct UncertaintyParams {
  Var s_c;
  Var s_r1;
  Var s_r2;

  static UncertaintyParams bind(Tape& tape, const NamedTensors& params);
};

/// Mean over the batch of -sum_c y_c log softmax(logits)_c. `onehot` is a
/// constant [B, 3]; every row must be a one-hot vector (std::invalid_argument
/// otherwise).
Var cross_entropy_loss(Var logits, const Tensor& onehot);

/// Mean squared error over every entry.
Var mse_loss(Var pred, Var target);

/// exp(-s_c) L_c + 0.5 exp(-s_r1) L_r1 + 0.5 exp(-s_r2) L_r2
///   + 0.5 (s_c + s_r1 + s_r2)
/// i.e. 1/sigma_c^2 L_c + 1/(2 sigma_r^2) L_r + log sigma per task.
Var joint_loss(Var l_c, Var l_r1, Var l_r2, const UncertaintyParams& u);

}  // namespace tmmoe
