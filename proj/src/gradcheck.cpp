#include "tmmoe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tmmoe {

double gradient_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-2});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const ScalarFunction& f, const NamedTensors& params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("grad_check: eps must be in (0, 1e-2]");

  GradientMap analytic;
  {
    Tape tape;
    analytic = tape.backward(f(tape, params), params);
  }

  auto evaluate = [&](const NamedTensors& p) {
    Tape tape;
    return f(tape, p).value().item();
  };

  GradCheckResult result;
  NamedTensors probe = params;
  for (const auto& [name, value] : params) {
    Tensor& slot = probe.get(name);
    const Tensor& grad = analytic.get(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double original = slot[i];
      slot[i] = original + eps;
      const double up = evaluate(probe);
      slot[i] = original - eps;
      const double down = evaluate(probe);
      slot[i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = gradient_error(grad[i], numeric);
      ++result.entries_checked;
      if (err > result.max_relative_error || result.worst_parameter.empty()) {
        result.max_relative_error = std::max(err, result.max_relative_error);
        if (err >= result.max_relative_error) {
          result.worst_parameter = name;
          result.worst_index = i;
          result.analytic = grad[i];
          result.numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace tmmoe
