#include "tmmoe/optim.hpp"

#include <cmath>

namespace tmmoe {

void adam_step(NamedTensors& params, const GradientMap& grads, AdamState& state,
               const AdamOptions& options) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
    if (!params.contains(name) || params.get(name).shape() != g.shape()) {
      throw DimensionError("gradient '" + name + "' does not match a parameter");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.get(name);
    if (!state.first_moment.contains(name)) {
      state.first_moment.set(name, Tensor(p.shape(), 0.0));
      state.second_moment.set(name, Tensor(p.shape(), 0.0));
    }
    Tensor& m = state.first_moment.get(name);
    Tensor& v = state.second_moment.get(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g[i];
      v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= options.learning_rate * m_hat / (std::sqrt(v_hat) + options.epsilon);
    }
  }
}

double global_norm(const GradientMap& grads) {
  double total = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data()) total += v * v;
  return std::sqrt(total);
}

double clip_global_norm(GradientMap& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& v : g.data()) v *= factor;
  }
  return norm;
}

}  // namespace tmmoe
