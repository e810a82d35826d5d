#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tmmoe/autodiff.hpp"
#include "tmmoe/random.hpp"

namespace tmmoe {

enum class Mode { kTrain, kEval };

struct ConvSpec {
  std::size_t kernel_size = 2;
  std::size_t dilation = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  void validate() const;
};

/// Causal dilated convolution whose parameters live under `prefix`:
///   <prefix>.weight [k, C_in, C_out], <prefix>.bias [C_out]
///
/// x is [T, C_in] for a single sequence or time-major [T, B, C_in] for a
/// batch; the result has the same layout with C_out channels and the same T.
Var dilated_causal_conv(Tape& tape, const NamedTensors& params, const std::string& prefix,
                        const ConvSpec& spec, Var x);

/// Uniform fan-in initialisation, bound sqrt(1 / (k * C_in)).
void init_conv(const std::string& prefix, const ConvSpec& spec, NamedTensors& params, Rng& rng);

struct BatchNormOptions {
  double momentum = 0.9;
  double eps = 1e-5;
};

/// conv -> BN -> ReLU -> conv -> BN, added to the input (or to a 1x1
/// projection of it when the channel counts differ), then ReLU.
struct ResidualBlock {
  std::string prefix;
  ConvSpec conv1;
  ConvSpec conv2;

  static ResidualBlock make(std::string prefix, std::size_t in_channels,
                            std::size_t out_channels, std::size_t kernel_size,
                            std::size_t dilation);

  bool has_projection() const { return conv1.in_channels != conv2.out_channels; }
  ConvSpec projection() const { return {1, 1, conv1.in_channels, conv2.out_channels}; }

  void init(NamedTensors& params, NamedTensors& buffers, Rng& rng) const;
};

/// Train mode normalises with batch statistics and folds them into the
/// running statistics in `buffers`; eval mode reads the running statistics.
Var residual_block_forward(Tape& tape, const ResidualBlock& block, const NamedTensors& params,
                           NamedTensors& buffers, Var x, Mode mode,
                           const BatchNormOptions& bn = {});

/// Inputs reachable by one output step of a stack of `depth` residual
/// blocks (two convolutions each) with dilations 1, 2, ..., 2^(depth-1).
std::size_t receptive_field(std::size_t kernel_size, std::size_t depth);

/// Smallest depth whose receptive field covers `window_length` steps.
std::size_t depth_for_window(std::size_t kernel_size, std::size_t window_length);

struct TcnConfig {
  std::size_t input_channels = 1;
  std::size_t filters = 64;
  std::size_t kernel_size = 2;
  std::size_t window_length = 1;
  /// Overrides the computed depth (0 gives an identity stack).
  std::optional<std::size_t> depth;
};

class TcnStack {
 public:
  TcnStack(std::string prefix, TcnConfig config);

  const TcnConfig& config() const { return config_; }
  const std::vector<ResidualBlock>& blocks() const { return blocks_; }
  std::size_t receptive_field() const;
  std::size_t output_channels() const;

  void init(NamedTensors& params, NamedTensors& buffers, Rng& rng) const;

  /// x: [T, F_in] or [T, B, F_in] with T equal to the configured window.
  Var forward(Tape& tape, const NamedTensors& params, NamedTensors& buffers, Var x,
              Mode mode) const;

 private:
  std::string prefix_;
  TcnConfig config_;
  std::vector<ResidualBlock> blocks_;
};

inline Var tcn_forward(Tape& tape, const TcnStack& stack, const NamedTensors& params,
                       NamedTensors& buffers, Var x, Mode mode) {
  return stack.forward(tape, params, buffers, x, mode);
}

}  // namespace tmmoe
