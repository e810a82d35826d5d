#pragma once

#include <cstdint>

#include "tmmoe/autodiff.hpp"

namespace tmmoe {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  NamedTensors first_moment;
  NamedTensors second_moment;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam update of every parameter that has a gradient.
/// Throws NumericError naming the parameter if its gradient is not finite;
/// nothing is modified in that case.
void adam_step(NamedTensors& params, const GradientMap& grads, AdamState& state,
               const AdamOptions& options);

/// Global L2 norm over every gradient entry.
double global_norm(const GradientMap& grads);

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(GradientMap& grads, double max_norm);

}  // namespace tmmoe
