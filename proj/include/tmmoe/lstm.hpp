#pragma once

#include <string>
#include <vector>

#include "tmmoe/autodiff.hpp"
#include "tmmoe/random.hpp"

namespace tmmoe {

/// Names and sizes of one LSTM's parameters. The four gates are fused
/// column-wise in the order input, forget, output, candidate:
///   <prefix>.W [D, 4H]   input weights
///   <prefix>.U [H, 4H]   recurrent weights
///   <prefix>.b [4H]      biases
struct LstmSpec {
  std::string prefix;
  std::size_t input_dim = 1;
  std::size_t hidden = 1;
};

enum class LstmGate : std::size_t { kInput = 0, kForget = 1, kOutput = 2, kCandidate = 3 };

/// Weights uniform in +-sqrt(1/H); forget-gate bias 1, other biases uniform.
void init_lstm(const LstmSpec& spec, NamedTensors& params, Rng& rng);

struct LstmParams {
  Var W;
  Var U;
  Var b;
  std::size_t hidden = 0;

  static LstmParams bind(Tape& tape, const NamedTensors& params, const LstmSpec& spec);
};

struct LstmState {
  Var h;  // [B, H]
  Var c;  // [B, H]

  static LstmState zeros(Tape& tape, std::size_t batch, std::size_t hidden);
};

/// One step. x_t is [B, D] (or [D] for a single sample, in which case the
/// state must be [1, H]).
///   i = s(W_i x + U_i h + b_i), f = s(...), o = s(...),
///   c~ = tanh(W_c x + U_c h + b_c), c' = f*c + i*c~, h' = o*tanh(c')
LstmState lstm_cell_step(Var x_t, const LstmState& state, const LstmParams& p);

struct LstmRun {
  std::vector<Var> hidden;  // h_1 .. h_T, each [B, H]
  LstmState final_state;

  /// Hidden states stacked to [T, B, H].
  Var sequence() const { return stack(hidden); }
};

/// Iterates the cell over a time-major sequence xs [T, B, D] (or [T, D]).
LstmRun lstm_run(Var xs, const LstmParams& p, const LstmState& init);

}  // namespace tmmoe
