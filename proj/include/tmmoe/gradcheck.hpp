#pragma once

#include <functional>
#include <string>

#include "tmmoe/autodiff.hpp"

namespace tmmoe {

/// Builds a scalar on `tape` from `params` (which it must bind through
/// Tape::parameter so perturbations are seen).
using ScalarFunction = std::function<Var(Tape& tape, const NamedTensors& params)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

/// Error between an analytic and a numeric derivative:
///   |a - n| / max(|a|, |n|, 1e-2)
/// Relative for derivatives above 1e-2 in magnitude; below that it measures
/// absolute error scaled by 100, so finite-difference round-off on
/// vanishing derivatives does not dominate.
double gradient_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `f` against central finite differences
/// over every entry of every tensor in `params`. `eps` must lie in (0, 1e-2].
GradCheckResult grad_check(const ScalarFunction& f, const NamedTensors& params,
                           double eps = 1e-5);

}  // namespace tmmoe
