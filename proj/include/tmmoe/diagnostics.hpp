#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tmmoe/gradcheck.hpp"
#include "tmmoe/model.hpp"

namespace tmmoe {

struct OpCheck {
  std::string op;
  GradCheckResult result;
};

/// Finite-difference check of every primitive op on small random operands,
/// one entry per op name.
std::vector<OpCheck> check_primitive_gradients(std::uint64_t seed);

/// Finite-difference check of the joint loss of a freshly initialised model
/// on a random batch, over every parameter including the loss log-variances.
/// Batch-norm running statistics are restored after each forward pass.
GradCheckResult check_model_gradient(const ModelConfig& config, std::size_t batch,
                                     std::uint64_t seed);

}  // namespace tmmoe
