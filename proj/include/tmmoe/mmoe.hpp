#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "tmmoe/lstm.hpp"

namespace tmmoe {

/// Raised when an upstream guarantee (e.g. gate weights summing to one) is
/// broken.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// n independent LSTM experts reading the shared sequence. Each expert
/// summarises the sequence by its final hidden state.
class ExpertBank {
 public:
  ExpertBank(std::string prefix, std::size_t input_dim, std::size_t num_experts,
             std::size_t hidden);

  std::size_t size() const { return specs_.size(); }
  std::size_t hidden() const { return hidden_; }
  const std::vector<LstmSpec>& specs() const { return specs_; }

  void init(NamedTensors& params, Rng& rng) const;

 private:
  std::vector<LstmSpec> specs_;
  std::size_t hidden_;
};

/// One LSTM gate per task followed by a linear head to n logits:
///   <prefix>.task<k>.lstm.{W,U,b}, <prefix>.task<k>.head.weight [H_g, n],
///   <prefix>.task<k>.head.bias [n]
class GateBank {
 public:
  GateBank(std::string prefix, std::size_t input_dim, std::size_t num_tasks,
           std::size_t num_experts, std::size_t hidden);

  std::size_t tasks() const { return lstm_specs_.size(); }
  std::size_t experts() const { return num_experts_; }
  const LstmSpec& lstm(std::size_t task) const { return lstm_specs_.at(task); }
  std::string head_prefix(std::size_t task) const;

  void init(NamedTensors& params, Rng& rng) const;

 private:
  std::string prefix_;
  std::vector<LstmSpec> lstm_specs_;
  std::size_t num_experts_;
};

/// Final hidden state of every expert: shared [T, B, H] -> [n, B, H_e]
/// (shared [T, H] -> [n, 1, H_e]).
Var expert_forward(Tape& tape, const ExpertBank& bank, const NamedTensors& params, Var shared);

/// Softmax gate weights for `task`: shared [T, B, H] -> [B, n].
Var gate_forward(Tape& tape, const GateBank& gates, std::size_t task, const NamedTensors& params,
                 Var shared);

/// Convex combination of expert outputs.
///   expert_outs [n, H_e] with weights [n]        -> [H_e]
///   expert_outs [n, B, H_e] with weights [B, n]  -> [B, H_e]
/// Throws ContractError if any weight row sums to 1 +- more than 1e-6.
Var mmoe_mix(Var expert_outs, Var weights);

}  // namespace tmmoe
