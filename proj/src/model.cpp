#include "tmmoe/model.hpp"

#include <cmath>
#include <stdexcept>

namespace tmmoe {
namespace {

constexpr double kMinStd = 1e-6;

// Per-column mean and standard deviation over `rows` rows of width `width`
// gathered by `value(row, col)`.
template <typename F>
std::pair<Tensor, Tensor> column_stats(std::size_t rows, std::size_t width, F value) {
  Tensor mean(Shape{width}), stddev(Shape{width});
  if (rows == 0) {
    stddev.fill(1.0);
    return {mean, stddev};
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) mean[c] += value(r, c);
  for (std::size_t c = 0; c < width; ++c) mean[c] /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const double d = value(r, c) - mean[c];
      stddev[c] += d * d;
    }
  for (std::size_t c = 0; c < width; ++c) {
    const double s = std::sqrt(stddev[c] / static_cast<double>(rows));
    stddev[c] = s > kMinStd ? s : 1.0;
  }
  return {mean, stddev};
}

std::size_t parse_size(const std::map<std::string, std::string>& m, const std::string& key,
                       std::size_t fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  return static_cast<std::size_t>(std::stoull(it->second));
}

}  // namespace

void ModelConfig::validate() const {
  if (input_features == 0 || window_steps == 0 || horizon_steps == 0 || tcn_filters == 0 ||
      kernel_size < 2 || num_experts == 0 || expert_hidden == 0 || gate_hidden == 0 ||
      tower_hidden == 0) {
    throw std::invalid_argument("model config: every size must be positive and kernel_size >= 2");
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {{"input_features", std::to_string(input_features)},
          {"window_steps", std::to_string(window_steps)},
          {"horizon_steps", std::to_string(horizon_steps)},
          {"tcn_filters", std::to_string(tcn_filters)},
          {"kernel_size", std::to_string(kernel_size)},
          {"num_experts", std::to_string(num_experts)},
          {"expert_hidden", std::to_string(expert_hidden)},
          {"gate_hidden", std::to_string(gate_hidden)},
          {"tower_hidden", std::to_string(tower_hidden)}};
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& m) {
  ModelConfig c;
  c.input_features = parse_size(m, "input_features", c.input_features);
  c.window_steps = parse_size(m, "window_steps", c.window_steps);
  c.horizon_steps = parse_size(m, "horizon_steps", c.horizon_steps);
  c.tcn_filters = parse_size(m, "tcn_filters", c.tcn_filters);
  c.kernel_size = parse_size(m, "kernel_size", c.kernel_size);
  c.num_experts = parse_size(m, "num_experts", c.num_experts);
  c.expert_hidden = parse_size(m, "expert_hidden", c.expert_hidden);
  c.gate_hidden = parse_size(m, "gate_hidden", c.gate_hidden);
  c.tower_hidden = parse_size(m, "tower_hidden", c.tower_hidden);
  return c;
}

TmmoeModel::TmmoeModel(ModelConfig config)
    : config_((config.validate(), config)),
      tcn_("tcn", TcnConfig{config.input_features, config.tcn_filters, config.kernel_size,
                            config.window_steps, std::nullopt}),
      experts_("mmoe", tcn_.output_channels(), config.num_experts, config.expert_hidden),
      gates_("gate", tcn_.output_channels(), kNumTasks, config.num_experts, config.gate_hidden),
      towers_("tower", config.expert_hidden, config.tower_hidden, config.horizon_steps) {}

void TmmoeModel::initialize(std::uint64_t seed) {
  Rng rng(seed);
  params_ = {};
  buffers_ = {};
  tcn_.init(params_, buffers_, rng);
  experts_.init(params_, rng);
  gates_.init(params_, rng);
  towers_.init(params_, rng);
  init_uncertainty(params_);
  const std::size_t F = config_.input_features, P = config_.horizon_steps;
  buffers_.set("norm.input_mean", Tensor(Shape{F}, 0.0));
  buffers_.set("norm.input_std", Tensor(Shape{F}, 1.0));
  buffers_.set("norm.lon_mean", Tensor(Shape{P}, 0.0));
  buffers_.set("norm.lon_std", Tensor(Shape{P}, 1.0));
  buffers_.set("norm.lat_mean", Tensor(Shape{P}, 0.0));
  buffers_.set("norm.lat_std", Tensor(Shape{P}, 1.0));
}

void TmmoeModel::fit_normalizer(const WindowSet& set, std::span<const std::size_t> indices) {
  const std::size_t T = set.steps, F = set.features, P = set.horizon;
  if (F != config_.input_features || P != config_.horizon_steps || T != config_.window_steps) {
    throw DimensionError("window set layout does not match the model configuration");
  }
  auto [in_mean, in_std] = column_stats(indices.size() * T, F, [&](std::size_t r, std::size_t c) {
    return set.windows[indices[r / T]].inputs[(r % T) * F + c];
  });
  auto [lon_mean, lon_std] = column_stats(indices.size(), P, [&](std::size_t r, std::size_t c) {
    return set.windows[indices[r]].longitudinal[c];
  });
  auto [lat_mean, lat_std] = column_stats(indices.size(), P, [&](std::size_t r, std::size_t c) {
    return set.windows[indices[r]].lateral[c];
  });
  buffers_.set("norm.input_mean", std::move(in_mean));
  buffers_.set("norm.input_std", std::move(in_std));
  buffers_.set("norm.lon_mean", std::move(lon_mean));
  buffers_.set("norm.lon_std", std::move(lon_std));
  buffers_.set("norm.lat_mean", std::move(lat_mean));
  buffers_.set("norm.lat_std", std::move(lat_std));
}

Batch TmmoeModel::normalize(Batch batch) const {
  const Tensor& im = buffers_.get("norm.input_mean");
  const Tensor& is = buffers_.get("norm.input_std");
  const std::size_t F = im.size();
  if (batch.inputs.rank() != 3 || batch.inputs.dim(2) != F) {
    throw DimensionError("batch feature width does not match the model");
  }
  for (std::size_t i = 0; i < batch.inputs.size(); ++i) {
    const std::size_t c = i % F;
    batch.inputs[i] = (batch.inputs[i] - im[c]) / is[c];
  }
  auto standardise = [&](Tensor& t, const char* mean_key, const char* std_key) {
    const Tensor& m = buffers_.get(mean_key);
    const Tensor& s = buffers_.get(std_key);
    const std::size_t P = m.size();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = (t[i] - m[i % P]) / s[i % P];
  };
  standardise(batch.longitudinal, "norm.lon_mean", "norm.lon_std");
  standardise(batch.lateral, "norm.lat_mean", "norm.lat_std");
  return batch;
}

ModelOutputs TmmoeModel::forward(Tape& tape, const NamedTensors& params, Var inputs, Mode mode) {
  ModelOutputs out;
  out.shared = tcn_.forward(tape, params, buffers_, inputs, mode);
  out.experts = expert_forward(tape, experts_, params, out.shared);
  std::array<Var, kNumTasks> heads;
  for (std::size_t k = 0; k < kNumTasks; ++k) {
    out.gates[k] = gate_forward(tape, gates_, k, params, out.shared);
    heads[k] = tower_forward(tape, towers_, k, params, mmoe_mix(out.experts, out.gates[k]));
  }
  out.intention_logits = heads[0];
  out.longitudinal = heads[1];
  out.lateral = heads[2];
  return out;
}

LossTerms TmmoeModel::losses(Tape& tape, const NamedTensors& params, const ModelOutputs& out,
                             const Batch& normalized) {
  LossTerms terms;
  terms.classification = cross_entropy_loss(out.intention_logits, normalized.onehot);
  terms.longitudinal = mse_loss(out.longitudinal, tape.constant(normalized.longitudinal));
  terms.lateral = mse_loss(out.lateral, tape.constant(normalized.lateral));
  terms.joint = joint_loss(terms.classification, terms.longitudinal, terms.lateral,
                           UncertaintyParams::bind(tape, params));
  return terms;
}

Predictions TmmoeModel::predict(const Batch& raw) const {
  // Eval mode never writes the buffers.
  TmmoeModel& self = const_cast<TmmoeModel&>(*this);
  Tape tape;
  const Batch norm = normalize(raw);
  ModelOutputs out = self.forward(tape, params_, tape.constant(norm.inputs), Mode::kEval);
  Predictions p;
  p.probabilities = softmax(out.intention_logits).value();
  auto restore = [&](const Tensor& t, const char* mean_key, const char* std_key) {
    Tensor r = t;
    const Tensor& m = buffers_.get(mean_key);
    const Tensor& s = buffers_.get(std_key);
    const std::size_t P = m.size();
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = r[i] * s[i % P] + m[i % P];
    return r;
  };
  p.longitudinal = restore(out.longitudinal.value(), "norm.lon_mean", "norm.lon_std");
  p.lateral = restore(out.lateral.value(), "norm.lat_mean", "norm.lat_std");
  return p;
}

NamedTensors TmmoeModel::state() const {
  NamedTensors s;
  for (const auto& [name, t] : params_) s.set("params/" + name, t);
  for (const auto& [name, t] : buffers_) s.set("buffers/" + name, t);
  return s;
}

void TmmoeModel::load_state(const NamedTensors& state) {
  NamedTensors params, buffers;
  for (const auto& [name, t] : state) {
    if (name.starts_with("params/")) {
      params.set(name.substr(7), t);
    } else if (name.starts_with("buffers/")) {
      buffers.set(name.substr(8), t);
    } else {
      throw FormatError("unexpected tensor '" + name + "' in model state");
    }
  }
  // Shapes must match a freshly initialised model of this configuration.
  TmmoeModel reference(config_);
  reference.initialize(0);
  auto check = [](const NamedTensors& expected, const NamedTensors& got, const char* what) {
    if (expected.size() != got.size()) {
      throw FormatError(std::string("model state has ") + std::to_string(got.size()) + " " + what +
                        ", expected " + std::to_string(expected.size()));
    }
    for (const auto& [name, t] : expected) {
      if (!got.contains(name) || got.get(name).shape() != t.shape()) {
        throw FormatError(std::string(what) + " '" + name + "' missing or misshapen");
      }
    }
  };
  check(reference.params_, params, "params");
  check(reference.buffers_, buffers, "buffers");
  params_ = std::move(params);
  buffers_ = std::move(buffers);
}

}  // namespace tmmoe
