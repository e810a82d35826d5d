#include "tmmoe/lstm.hpp"

#include <cmath>

namespace tmmoe {
namespace {

// Gate nonlinearities applied to fused pre-activations [B, 4H].
LstmState gates_to_state(Var pre, const LstmState& state) {
  Var gates = lstm_gates(pre);
  Var c = lstm_cell(gates, state.c);
  return {lstm_output(gates, c), c};
}

}  // namespace

void init_lstm(const LstmSpec& spec, NamedTensors& params, Rng& rng) {
  const std::size_t h = spec.hidden;
  const double bound = std::sqrt(1.0 / static_cast<double>(h));
  Tensor w(Shape{spec.input_dim, 4 * h});
  Tensor u(Shape{h, 4 * h});
  Tensor b(Shape{4 * h});
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  for (double& v : u.data()) v = rng.uniform(-bound, bound);
  for (std::size_t j = 0; j < 4 * h; ++j) {
    b[j] = (j / h == static_cast<std::size_t>(LstmGate::kForget)) ? 1.0 : rng.uniform(-bound, bound);
  }
  params.set(spec.prefix + ".W", std::move(w));
  params.set(spec.prefix + ".U", std::move(u));
  params.set(spec.prefix + ".b", std::move(b));
}

LstmParams LstmParams::bind(Tape& tape, const NamedTensors& params, const LstmSpec& spec) {
  LstmParams p{tape.parameter(params, spec.prefix + ".W"), tape.parameter(params, spec.prefix + ".U"),
               tape.parameter(params, spec.prefix + ".b"), spec.hidden};
  const Shape w{spec.input_dim, 4 * spec.hidden};
  const Shape u{spec.hidden, 4 * spec.hidden};
  if (p.W.shape() != w || p.U.shape() != u || p.b.shape() != Shape{4 * spec.hidden}) {
    throw DimensionError(spec.prefix + ": parameter shapes do not match D=" +
                         std::to_string(spec.input_dim) + " H=" + std::to_string(spec.hidden));
  }
  return p;
}

LstmState LstmState::zeros(Tape& tape, std::size_t batch, std::size_t hidden) {
  return {tape.constant(Tensor(Shape{batch, hidden})), tape.constant(Tensor(Shape{batch, hidden}))};
}

LstmState lstm_cell_step(Var x_t, const LstmState& state, const LstmParams& p) {
  if (x_t.value().rank() == 1) x_t = reshape(x_t, Shape{1, x_t.shape()[0]});
  if (state.h.shape() != Shape{x_t.shape()[0], p.hidden} || state.c.shape() != state.h.shape()) {
    throw DimensionError("lstm_cell_step: state shape " + shape_str(state.h.shape()) +
                         " does not match batch of " + shape_str(x_t.shape()));
  }
  Var pre = add_bias(matmul_acc(matmul(x_t, p.W), state.h, p.U), p.b);
  return gates_to_state(pre, state);
}

LstmRun lstm_run(Var xs, const LstmParams& p, const LstmState& init) {
  if (xs.value().rank() == 2) xs = reshape(xs, Shape{xs.shape()[0], 1, xs.shape()[1]});
  if (xs.value().rank() != 3) throw DimensionError("lstm_run: expected [T, B, D], got " + shape_str(xs.shape()));
  const std::size_t steps = xs.shape()[0];
  const std::size_t batch = xs.shape()[1];
  const std::size_t dim = xs.shape()[2];
  if (steps == 0) throw DimensionError("lstm_run needs at least one step");
  if (init.h.shape() != Shape{batch, p.hidden}) {
    throw DimensionError("lstm_run: initial state " + shape_str(init.h.shape()) +
                         " does not match batch " + std::to_string(batch));
  }
  // Input projections for every step in one product.
  Var projected = add_bias(matmul(reshape(xs, Shape{steps * batch, dim}), p.W), p.b);
  LstmRun run;
  run.hidden.reserve(steps);
  LstmState state = init;
  for (std::size_t t = 0; t < steps; ++t) {
    Var pre = matmul_acc(slice_rows(projected, t * batch, batch), state.h, p.U);
    state = gates_to_state(pre, state);
    run.hidden.push_back(state.h);
  }
  run.final_state = state;
  return run;
}

}  // namespace tmmoe
