#include "tmmoe/mmoe.hpp"

#include <cmath>

namespace tmmoe {
namespace {

Var batched_sequence(Var shared) {
  if (shared.value().rank() == 2) return reshape(shared, Shape{shared.shape()[0], 1, shared.shape()[1]});
  if (shared.value().rank() != 3) {
    throw DimensionError("expected shared features [T, B, H], got " + shape_str(shared.shape()));
  }
  return shared;
}

}  // namespace

ExpertBank::ExpertBank(std::string prefix, std::size_t input_dim, std::size_t num_experts,
                       std::size_t hidden)
    : hidden_(hidden) {
  if (num_experts == 0) throw std::invalid_argument("expert bank needs at least one expert");
  for (std::size_t i = 0; i < num_experts; ++i) {
    specs_.push_back({prefix + ".expert" + std::to_string(i), input_dim, hidden});
  }
}

void ExpertBank::init(NamedTensors& params, Rng& rng) const {
  for (const auto& spec : specs_) init_lstm(spec, params, rng);
}

GateBank::GateBank(std::string prefix, std::size_t input_dim, std::size_t num_tasks,
                   std::size_t num_experts, std::size_t hidden)
    : prefix_(std::move(prefix)), num_experts_(num_experts) {
  for (std::size_t k = 0; k < num_tasks; ++k) {
    lstm_specs_.push_back({prefix_ + ".task" + std::to_string(k) + ".lstm", input_dim, hidden});
  }
}

std::string GateBank::head_prefix(std::size_t task) const {
  return prefix_ + ".task" + std::to_string(task) + ".head";
}

void GateBank::init(NamedTensors& params, Rng& rng) const {
  for (std::size_t k = 0; k < lstm_specs_.size(); ++k) {
    init_lstm(lstm_specs_[k], params, rng);
    const std::size_t h = lstm_specs_[k].hidden;
    const double bound = std::sqrt(1.0 / static_cast<double>(h));
    Tensor w(Shape{h, num_experts_});
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    params.set(head_prefix(k) + ".weight", std::move(w));
    params.set(head_prefix(k) + ".bias", Tensor(Shape{num_experts_}, 0.0));
  }
}

Var expert_forward(Tape& tape, const ExpertBank& bank, const NamedTensors& params, Var shared) {
  Var seq = batched_sequence(shared);
  const std::size_t batch = seq.shape()[1];
  std::vector<Var> finals;
  finals.reserve(bank.size());
  for (const auto& spec : bank.specs()) {
    const LstmParams p = LstmParams::bind(tape, params, spec);
    finals.push_back(lstm_run(seq, p, LstmState::zeros(tape, batch, spec.hidden)).final_state.h);
  }
  return stack(finals);
}

Var gate_forward(Tape& tape, const GateBank& gates, std::size_t task, const NamedTensors& params,
                 Var shared) {
  if (task >= gates.tasks()) throw std::out_of_range("gate task index " + std::to_string(task));
  Var seq = batched_sequence(shared);
  const LstmSpec& spec = gates.lstm(task);
  const LstmParams p = LstmParams::bind(tape, params, spec);
  Var h = lstm_run(seq, p, LstmState::zeros(tape, seq.shape()[1], spec.hidden)).final_state.h;
  Var w = tape.parameter(params, gates.head_prefix(task) + ".weight");
  Var b = tape.parameter(params, gates.head_prefix(task) + ".bias");
  return softmax(add_bias(matmul(h, w), b));
}

Var mmoe_mix(Var expert_outs, Var weights) {
  const bool single = expert_outs.value().rank() == 2;
  if (single) {
    if (weights.value().rank() != 1) {
      throw DimensionError("mmoe_mix: weights " + shape_str(weights.shape()) +
                           " for experts " + shape_str(expert_outs.shape()));
    }
    const auto& s = expert_outs.shape();
    expert_outs = reshape(expert_outs, Shape{s[0], 1, s[1]});
    weights = reshape(weights, Shape{1, weights.shape()[0]});
  }
  const Tensor& w = weights.value();
  if (w.rank() != 2) throw DimensionError("mmoe_mix: weights must be [B, n]");
  const std::size_t n = w.dim(1);
  for (std::size_t r = 0; r < w.dim(0); ++r) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += w[r * n + i];
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractError("mmoe_mix: gate weights sum to " + std::to_string(total));
    }
  }
  Var mixed = mix_experts(expert_outs, weights);
  return single ? reshape(mixed, Shape{mixed.shape()[1]}) : mixed;
}

}  // namespace tmmoe
