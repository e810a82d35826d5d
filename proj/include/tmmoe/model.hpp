#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "tmmoe/feature_window.hpp"
#include "tmmoe/loss.hpp"
#include "tmmoe/mmoe.hpp"
#include "tmmoe/tcn.hpp"
#include "tmmoe/towers.hpp"

namespace tmmoe {

struct ModelConfig {
  std::size_t input_features = feature::kCount;
  std::size_t window_steps = 60;
  std::size_t horizon_steps = 30;
  std::size_t tcn_filters = 64;
  std::size_t kernel_size = 2;
  std::size_t num_experts = 12;
  std::size_t expert_hidden = 64;
  std::size_t gate_hidden = 16;
  std::size_t tower_hidden = 64;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  /// Reads the keys written by to_map(); missing keys keep their defaults.
  static ModelConfig from_map(const std::map<std::string, std::string>& values);
};

struct ModelOutputs {
  Var shared;                  // [T, B, H]
  Var experts;                 // [n, B, H_e]
  std::array<Var, kNumTasks> gates;  // [B, n] each
  Var intention_logits;        // [B, 3]
  Var longitudinal;            // [B, P], normalised units
  Var lateral;                 // [B, P], normalised units
};

struct LossTerms {
  Var joint;
  Var classification;
  Var longitudinal;
  Var lateral;
};

struct Predictions {
  Tensor probabilities;  // [B, 3]
  Tensor longitudinal;   // [B, P] displacement in metres
  Tensor lateral;        // [B, P] displacement in metres
};

/// Shared TCN -> MMoE (LSTM experts and gates) -> per-task towers, plus the
/// three learnable loss log-variances.
///
/// Buffers hold batch-norm running statistics and the input/target
/// standardisation fitted on the training set ("norm.*").
class TmmoeModel {
 public:
  explicit TmmoeModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  NamedTensors& params() { return params_; }
  const NamedTensors& params() const { return params_; }
  NamedTensors& buffers() { return buffers_; }
  const NamedTensors& buffers() const { return buffers_; }

  const TcnStack& tcn() const { return tcn_; }
  const ExpertBank& experts() const { return experts_; }
  const GateBank& gates() const { return gates_; }
  const Towers& towers() const { return towers_; }

  void initialize(std::uint64_t seed);

  /// Per-feature and per-step standardisation from `set[indices]`.
  void fit_normalizer(const WindowSet& set, std::span<const std::size_t> indices);
  /// Standardises inputs and targets of a raw batch.
  Batch normalize(Batch batch) const;

  /// `params` may differ from params() (gradient checking); `inputs` is a
  /// normalised [T, B, F] batch. Train mode updates batch-norm statistics.
  ModelOutputs forward(Tape& tape, const NamedTensors& params, Var inputs, Mode mode);
  ModelOutputs forward(Tape& tape, Var inputs, Mode mode) {
    return forward(tape, params_, inputs, mode);
  }

  /// Task losses and the uncertainty-weighted joint loss against a
  /// normalised batch.
  static LossTerms losses(Tape& tape, const NamedTensors& params, const ModelOutputs& out,
                          const Batch& normalized);

  /// Eval-mode prediction on a raw batch, targets in metres.
  Predictions predict(const Batch& raw) const;

  /// Parameters and buffers as one container ("params/..", "buffers/..").
  NamedTensors state() const;
  void load_state(const NamedTensors& state);

 private:
  ModelConfig config_;
  TcnStack tcn_;
  ExpertBank experts_;
  GateBank gates_;
  Towers towers_;
  NamedTensors params_;
  NamedTensors buffers_;
};

}  // namespace tmmoe
