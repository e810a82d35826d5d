#pragma once

#include <array>
#include <string>

#include "tmmoe/autodiff.hpp"
#include "tmmoe/random.hpp"

namespace tmmoe {

/// Task order used throughout: intention classification, then longitudinal
/// and lateral displacement regression.
enum class Task : std::size_t { kIntention = 0, kLongitudinal = 1, kLateral = 2 };
inline constexpr std::size_t kNumTasks = 3;
inline constexpr std::size_t kNumIntentions = 3;

/// Per-task heads linear -> ReLU -> linear. Parameters per task k:
///   <prefix>.task<k>.hidden.{weight [H_in, H_t], bias [H_t]}
///   <prefix>.task<k>.out.{weight [H_t, out_k], bias [out_k]}
class Towers {
 public:
  Towers(std::string prefix, std::size_t input_dim, std::size_t hidden, std::size_t horizon);

  std::size_t output_dim(std::size_t task) const;
  std::size_t hidden() const { return hidden_; }
  std::string task_prefix(std::size_t task) const;

  void init(NamedTensors& params, Rng& rng) const;

 private:
  std::string prefix_;
  std::size_t input_dim_;
  std::size_t hidden_;
  std::size_t horizon_;
};

/// mixed [B, H_e] (or [H_e]) -> [B, out_k] (or [out_k]). The intention tower
/// returns raw logits. Throws std::out_of_range for a task index >= 3.
Var tower_forward(Tape& tape, const Towers& towers, std::size_t task, const NamedTensors& params,
                  Var mixed);

}  // namespace tmmoe
