#include "tmmoe/loss.hpp"

#include <stdexcept>

namespace tmmoe {

void init_uncertainty(NamedTensors& params) {
  params.set(kLogVarClassification, Tensor::scalar(0.0));
  params.set(kLogVarLongitudinal, Tensor::scalar(0.0));
  params.set(kLogVarLateral, Tensor::scalar(0.0));
}

UncertaintyParams UncertaintyParams::bind(Tape& tape, const NamedTensors& params) {
  return {tape.parameter(params, kLogVarClassification),
          tape.parameter(params, kLogVarLongitudinal), tape.parameter(params, kLogVarLateral)};
}

Var cross_entropy_loss(Var logits, const Tensor& onehot) {
  if (logits.shape() != onehot.shape() || onehot.rank() != 2) {
    throw DimensionError("cross_entropy_loss: logits " + shape_str(logits.shape()) +
                         " vs labels " + shape_str(onehot.shape()));
  }
  const std::size_t rows = onehot.dim(0), classes = onehot.dim(1);
  if (rows == 0) throw DimensionError("cross_entropy_loss on an empty batch");
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t ones = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double v = onehot[r * classes + c];
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = 2;
        break;
      }
    }
    if (ones != 1) throw std::invalid_argument("label row " + std::to_string(r) + " is not one-hot");
  }
  Var picked = sum(mul(log_softmax(logits), logits.tape().constant(onehot)));
  return scale(picked, -1.0 / static_cast<double>(rows));
}

Var mse_loss(Var pred, Var target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  return mean(square(sub(pred, target)));
}

Var joint_loss(Var l_c, Var l_r1, Var l_r2, const UncertaintyParams& u) {
  Var weighted = add(mul(exp(scale(u.s_c, -1.0)), l_c),
                     add(scale(mul(exp(scale(u.s_r1, -1.0)), l_r1), 0.5),
                         scale(mul(exp(scale(u.s_r2, -1.0)), l_r2), 0.5)));
  Var regulariser = scale(add(u.s_c, add(u.s_r1, u.s_r2)), 0.5);
  return add(weighted, regulariser);
}

}  // namespace tmmoe
