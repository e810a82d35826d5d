#include "tmmoe/tcn.hpp"

#include <cmath>
#include <stdexcept>

namespace tmmoe {
namespace {

// Lifts [T, C] to [T, 1, C]; returns whether it did.
std::pair<Var, bool> as_batched(Var x) {
  if (x.value().rank() == 2) {
    const auto& s = x.shape();
    return {reshape(x, Shape{s[0], 1, s[1]}), true};
  }
  if (x.value().rank() != 3) {
    throw DimensionError("sequence input must be [T, C] or [T, B, C], got " + shape_str(x.shape()));
  }
  return {x, false};
}

Var unbatch(Var y, bool lifted) {
  if (!lifted) return y;
  const auto& s = y.shape();
  return reshape(y, Shape{s[0], s[2]});
}

Var batch_norm(Tape& tape, const std::string& prefix, const NamedTensors& params,
               NamedTensors& buffers, Var x, Mode mode, const BatchNormOptions& bn) {
  Var gamma = tape.parameter(params, prefix + ".gamma");
  Var beta = tape.parameter(params, prefix + ".beta");
  Tensor& running_mean = buffers.get(prefix + ".running_mean");
  Tensor& running_var = buffers.get(prefix + ".running_var");
  if (mode == Mode::kEval) {
    return batch_norm_eval(x, gamma, beta, running_mean, running_var, bn.eps);
  }
  Tensor batch_mean, batch_var;
  Var y = batch_norm_train(x, gamma, beta, bn.eps, &batch_mean, &batch_var);
  const std::size_t c = batch_mean.size();
  const double m = static_cast<double>(x.value().size() / c);
  const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
  for (std::size_t j = 0; j < c; ++j) {
    running_mean[j] = bn.momentum * running_mean[j] + (1.0 - bn.momentum) * batch_mean[j];
    running_var[j] = bn.momentum * running_var[j] + (1.0 - bn.momentum) * batch_var[j] * unbias;
  }
  return y;
}

void init_batch_norm(const std::string& prefix, std::size_t channels, NamedTensors& params,
                     NamedTensors& buffers) {
  params.set(prefix + ".gamma", Tensor(Shape{channels}, 1.0));
  params.set(prefix + ".beta", Tensor(Shape{channels}, 0.0));
  buffers.set(prefix + ".running_mean", Tensor(Shape{channels}, 0.0));
  buffers.set(prefix + ".running_var", Tensor(Shape{channels}, 1.0));
}

}  // namespace

void ConvSpec::validate() const {
  if (kernel_size < 1 || dilation < 1 || in_channels < 1 || out_channels < 1) {
    throw std::invalid_argument("ConvSpec: kernel size, dilation and channels must be >= 1");
  }
}

Var dilated_causal_conv(Tape& tape, const NamedTensors& params, const std::string& prefix,
                        const ConvSpec& spec, Var x) {
  spec.validate();
  auto [xb, lifted] = as_batched(x);
  if (xb.shape()[2] != spec.in_channels) {
    throw DimensionError(prefix + ": expected " + std::to_string(spec.in_channels) +
                         " input channels, got " + shape_str(x.shape()));
  }
  Var w = tape.parameter(params, prefix + ".weight");
  Var b = tape.parameter(params, prefix + ".bias");
  if (w.shape() != Shape{spec.kernel_size, spec.in_channels, spec.out_channels}) {
    throw DimensionError(prefix + ".weight has shape " + shape_str(w.shape()));
  }
  return unbatch(causal_conv1d(xb, w, b, spec.dilation), lifted);
}

void init_conv(const std::string& prefix, const ConvSpec& spec, NamedTensors& params, Rng& rng) {
  spec.validate();
  const double bound = std::sqrt(1.0 / static_cast<double>(spec.kernel_size * spec.in_channels));
  Tensor w(Shape{spec.kernel_size, spec.in_channels, spec.out_channels});
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  Tensor b(Shape{spec.out_channels});
  for (double& v : b.data()) v = rng.uniform(-bound, bound);
  params.set(prefix + ".weight", std::move(w));
  params.set(prefix + ".bias", std::move(b));
}

ResidualBlock ResidualBlock::make(std::string prefix, std::size_t in_channels,
                                  std::size_t out_channels, std::size_t kernel_size,
                                  std::size_t dilation) {
  ResidualBlock block;
  block.prefix = std::move(prefix);
  block.conv1 = {kernel_size, dilation, in_channels, out_channels};
  block.conv2 = {kernel_size, dilation, out_channels, out_channels};
  block.conv1.validate();
  return block;
}

void ResidualBlock::init(NamedTensors& params, NamedTensors& buffers, Rng& rng) const {
  init_conv(prefix + ".conv1", conv1, params, rng);
  init_batch_norm(prefix + ".bn1", conv1.out_channels, params, buffers);
  init_conv(prefix + ".conv2", conv2, params, rng);
  init_batch_norm(prefix + ".bn2", conv2.out_channels, params, buffers);
  if (has_projection()) init_conv(prefix + ".proj", projection(), params, rng);
}

Var residual_block_forward(Tape& tape, const ResidualBlock& block, const NamedTensors& params,
                           NamedTensors& buffers, Var x, Mode mode, const BatchNormOptions& bn) {
  auto [xb, lifted] = as_batched(x);
  Var h = dilated_causal_conv(tape, params, block.prefix + ".conv1", block.conv1, xb);
  h = relu(batch_norm(tape, block.prefix + ".bn1", params, buffers, h, mode, bn));
  h = dilated_causal_conv(tape, params, block.prefix + ".conv2", block.conv2, h);
  h = batch_norm(tape, block.prefix + ".bn2", params, buffers, h, mode, bn);
  Var skip = block.has_projection()
                 ? dilated_causal_conv(tape, params, block.prefix + ".proj", block.projection(), xb)
                 : xb;
  return unbatch(relu(add(h, skip)), lifted);
}

std::size_t receptive_field(std::size_t kernel_size, std::size_t depth) {
  return 1 + 2 * (kernel_size - 1) * ((std::size_t{1} << depth) - 1);
}

std::size_t depth_for_window(std::size_t kernel_size, std::size_t window_length) {
  if (kernel_size < 2) throw std::invalid_argument("kernel size 1 never widens the receptive field");
  std::size_t depth = 0;
  while (receptive_field(kernel_size, depth) < window_length) ++depth;
  return depth;
}

TcnStack::TcnStack(std::string prefix, TcnConfig config)
    : prefix_(std::move(prefix)), config_(config) {
  if (config_.window_length < 1) throw std::invalid_argument("TCN window length must be >= 1");
  const std::size_t depth =
      config_.depth ? *config_.depth : depth_for_window(config_.kernel_size, config_.window_length);
  std::size_t channels = config_.input_channels;
  for (std::size_t level = 0; level < depth; ++level) {
    blocks_.push_back(ResidualBlock::make(prefix_ + ".block" + std::to_string(level), channels,
                                          config_.filters, config_.kernel_size,
                                          std::size_t{1} << level));
    channels = config_.filters;
  }
}

std::size_t TcnStack::receptive_field() const {
  return tmmoe::receptive_field(config_.kernel_size, blocks_.size());
}

std::size_t TcnStack::output_channels() const {
  return blocks_.empty() ? config_.input_channels : config_.filters;
}

void TcnStack::init(NamedTensors& params, NamedTensors& buffers, Rng& rng) const {
  for (const auto& block : blocks_) block.init(params, buffers, rng);
}

Var TcnStack::forward(Tape& tape, const NamedTensors& params, NamedTensors& buffers, Var x,
                      Mode mode) const {
  if (x.value().rank() < 2 || x.shape()[0] != config_.window_length) {
    throw DimensionError("TCN configured for " + std::to_string(config_.window_length) +
                         " steps, got input " + shape_str(x.shape()));
  }
  Var h = x;
  for (const auto& block : blocks_) h = residual_block_forward(tape, block, params, buffers, h, mode);
  return h;
}

}  // namespace tmmoe
