#include "tmmoe/towers.hpp"

#include <cmath>
#include <stdexcept>

namespace tmmoe {
namespace {

void init_linear(const std::string& prefix, std::size_t in, std::size_t out, NamedTensors& params,
                 Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  Tensor w(Shape{in, out});
  Tensor b(Shape{out});
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  for (double& v : b.data()) v = rng.uniform(-bound, bound);
  params.set(prefix + ".weight", std::move(w));
  params.set(prefix + ".bias", std::move(b));
}

Var linear(Tape& tape, const NamedTensors& params, const std::string& prefix, Var x) {
  return add_bias(matmul(x, tape.parameter(params, prefix + ".weight")),
                  tape.parameter(params, prefix + ".bias"));
}

}  // namespace

Towers::Towers(std::string prefix, std::size_t input_dim, std::size_t hidden, std::size_t horizon)
    : prefix_(std::move(prefix)), input_dim_(input_dim), hidden_(hidden), horizon_(horizon) {}

std::size_t Towers::output_dim(std::size_t task) const {
  if (task >= kNumTasks) throw std::out_of_range("tower task index " + std::to_string(task));
  return task == static_cast<std::size_t>(Task::kIntention) ? kNumIntentions : horizon_;
}

std::string Towers::task_prefix(std::size_t task) const {
  return prefix_ + ".task" + std::to_string(task);
}

void Towers::init(NamedTensors& params, Rng& rng) const {
  for (std::size_t k = 0; k < kNumTasks; ++k) {
    init_linear(task_prefix(k) + ".hidden", input_dim_, hidden_, params, rng);
    init_linear(task_prefix(k) + ".out", hidden_, output_dim(k), params, rng);
  }
}

Var tower_forward(Tape& tape, const Towers& towers, std::size_t task, const NamedTensors& params,
                  Var mixed) {
  const std::size_t out_dim = towers.output_dim(task);
  const bool single = mixed.value().rank() == 1;
  if (single) mixed = reshape(mixed, Shape{1, mixed.shape()[0]});
  const std::string prefix = towers.task_prefix(task);
  Var h = relu(linear(tape, params, prefix + ".hidden", mixed));
  Var y = linear(tape, params, prefix + ".out", h);
  return single ? reshape(y, Shape{out_dim}) : y;
}

}  // namespace tmmoe
