#include "tmmoe/diagnostics.hpp"

#include <array>
#include <functional>

#include "tmmoe/random.hpp"

namespace tmmoe {
namespace {

Tensor normal_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Weighted sum against a fixed random tensor, so every output entry reaches
// the scalar with its own coefficient.
Var project(Var v, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(v, v.tape().constant(normal_tensor(rng, v.shape()))));
}

using Builder = std::function<Var(Tape&, const NamedTensors&)>;

}  // namespace

std::vector<OpCheck> check_primitive_gradients(std::uint64_t seed) {
  Rng rng(seed);
  NamedTensors p;
  p.set("a", normal_tensor(rng, {3, 4}));
  p.set("b", normal_tensor(rng, {3, 4}));
  p.set("pos", uniform_tensor(rng, {3, 4}, 0.5, 3.0));
  p.set("s", Tensor::scalar(0.7));
  p.set("m", normal_tensor(rng, {4, 2}));
  p.set("c", normal_tensor(rng, {3, 2}));
  p.set("bias", normal_tensor(rng, {4}));
  p.set("pre", normal_tensor(rng, {3, 8}, 1.5));
  p.set("state", normal_tensor(rng, {3, 2}));
  p.set("x", normal_tensor(rng, {6, 3, 2}));
  p.set("w", normal_tensor(rng, {2, 2, 3}, 0.5));
  p.set("cb", normal_tensor(rng, {3}));
  p.set("gamma", uniform_tensor(rng, {2}, 0.5, 1.5));
  p.set("beta", normal_tensor(rng, {2}));
  p.set("experts", normal_tensor(rng, {4, 3, 5}));
  p.set("logits", normal_tensor(rng, {3, 4}));

  const std::uint64_t ps = seed + 1;
  auto v = [](Tape& t, const NamedTensors& q, const char* name) { return t.parameter(q, name); };
  const Tensor run_mean = Tensor::vector({0.1, -0.2}), run_var = Tensor::vector({1.3, 0.8});
  const std::vector<std::pair<std::string, Builder>> cases = {
      {"matmul", [&](Tape& t, const NamedTensors& q) { return project(matmul(v(t, q, "a"), v(t, q, "m")), ps); }},
      {"matmul_acc", [&](Tape& t, const NamedTensors& q) {
         return project(matmul_acc(v(t, q, "c"), v(t, q, "a"), v(t, q, "m")), ps);
       }},
      {"add", [&](Tape& t, const NamedTensors& q) { return project(add(v(t, q, "a"), v(t, q, "b")), ps); }},
      {"sub", [&](Tape& t, const NamedTensors& q) { return project(sub(v(t, q, "a"), v(t, q, "b")), ps); }},
      {"mul", [&](Tape& t, const NamedTensors& q) {
         return add(project(mul(v(t, q, "a"), v(t, q, "b")), ps), project(mul(v(t, q, "a"), v(t, q, "s")), ps));
       }},
      {"scale", [&](Tape& t, const NamedTensors& q) { return project(scale(v(t, q, "a"), 1.5), ps); }},
      {"add_bias", [&](Tape& t, const NamedTensors& q) {
         return project(add_bias(v(t, q, "a"), v(t, q, "bias")), ps);
       }},
      {"sigmoid", [&](Tape& t, const NamedTensors& q) { return project(sigmoid(v(t, q, "a")), ps); }},
      {"tanh", [&](Tape& t, const NamedTensors& q) { return project(tanh(v(t, q, "a")), ps); }},
      {"relu", [&](Tape& t, const NamedTensors& q) { return project(relu(v(t, q, "a")), ps); }},
      {"exp", [&](Tape& t, const NamedTensors& q) { return project(exp(v(t, q, "a")), ps); }},
      {"log", [&](Tape& t, const NamedTensors& q) { return project(log(v(t, q, "pos")), ps); }},
      {"square", [&](Tape& t, const NamedTensors& q) { return project(square(v(t, q, "a")), ps); }},
      {"softmax", [&](Tape& t, const NamedTensors& q) { return project(softmax(v(t, q, "a")), ps); }},
      {"log_softmax", [&](Tape& t, const NamedTensors& q) { return project(log_softmax(v(t, q, "a")), ps); }},
      {"sum", [&](Tape& t, const NamedTensors& q) { return sum(square(v(t, q, "a"))); }},
      {"mean", [&](Tape& t, const NamedTensors& q) { return mean(square(v(t, q, "a"))); }},
      {"reshape", [&](Tape& t, const NamedTensors& q) { return project(reshape(v(t, q, "a"), Shape{2, 6}), ps); }},
      {"slice_cols", [&](Tape& t, const NamedTensors& q) { return project(slice_cols(v(t, q, "a"), 1, 2), ps); }},
      {"slice_rows", [&](Tape& t, const NamedTensors& q) { return project(slice_rows(v(t, q, "a"), 1, 2), ps); }},
      {"stack", [&](Tape& t, const NamedTensors& q) {
         const std::array<Var, 2> parts{v(t, q, "a"), v(t, q, "b")};
         return project(stack(parts), ps);
       }},
      {"causal_conv1d", [&](Tape& t, const NamedTensors& q) {
         return project(causal_conv1d(v(t, q, "x"), v(t, q, "w"), v(t, q, "cb"), 2), ps);
       }},
      {"batch_norm", [&](Tape& t, const NamedTensors& q) {
         return project(batch_norm_train(v(t, q, "x"), v(t, q, "gamma"), v(t, q, "beta"), 1e-5), ps);
       }},
      {"batch_norm_eval", [&](Tape& t, const NamedTensors& q) {
         return project(batch_norm_eval(v(t, q, "x"), v(t, q, "gamma"), v(t, q, "beta"), run_mean,
                                        run_var, 1e-5),
                        ps);
       }},
      {"mix_experts", [&](Tape& t, const NamedTensors& q) {
         return project(mix_experts(v(t, q, "experts"), softmax(v(t, q, "logits"))), ps);
       }},
      {"lstm_gates", [&](Tape& t, const NamedTensors& q) { return project(lstm_gates(v(t, q, "pre")), ps); }},
      {"lstm_cell", [&](Tape& t, const NamedTensors& q) {
         return project(lstm_cell(lstm_gates(v(t, q, "pre")), v(t, q, "state")), ps);
       }},
      {"lstm_output", [&](Tape& t, const NamedTensors& q) {
         return project(lstm_output(lstm_gates(v(t, q, "pre")), v(t, q, "state")), ps);
       }},
  };

  std::vector<OpCheck> out;
  out.reserve(cases.size());
  for (const auto& [op, build] : cases) {
    // Bind only the tensors the case touches so entries_checked is meaningful.
    NamedTensors used;
    {
      Tape probe_tape;
      build(probe_tape, p);
      for (const auto& [name, value] : p) {
        if (probe_tape.has_parameter(name)) used.set(name, value);
      }
    }
    out.push_back({op, grad_check(build, used)});
  }
  return out;
}

GradCheckResult check_model_gradient(const ModelConfig& config, std::size_t batch,
                                     std::uint64_t seed) {
  TmmoeModel model(config);
  model.initialize(seed);
  Rng rng(seed + 1);
  Batch b;
  b.inputs = normal_tensor(rng, {config.window_steps, batch, config.input_features});
  b.onehot = Tensor(Shape{batch, 3});
  for (std::size_t i = 0; i < batch; ++i) {
    const auto label = rng.below(3);
    b.onehot.at(i, label) = 1.0;
    b.labels.push_back(intention_from_index(label));
  }
  b.longitudinal = normal_tensor(rng, {batch, config.horizon_steps});
  b.lateral = normal_tensor(rng, {batch, config.horizon_steps});
  // Move the log-variances off zero so their gradients are not trivially symmetric.
  for (auto& [name, t] : model.params()) {
    if (name.starts_with("loss.")) t[0] = rng.normal(0.0, 0.3);
  }
  const NamedTensors buffers = model.buffers();
  auto f = [&](Tape& tape, const NamedTensors& q) {
    const ModelOutputs out = model.forward(tape, q, tape.constant(b.inputs), Mode::kTrain);
    model.buffers() = buffers;
    return TmmoeModel::losses(tape, q, out, b).joint;
  };
  return grad_check(f, model.params());
}

}  // namespace tmmoe
