#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tmmoe/named_tensors.hpp"
#include "tmmoe/tensor.hpp"

namespace tmmoe {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid until the
/// tape is reset.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Gradient per parameter name, shaped like the parameter.
using GradientMap = NamedTensors;

/// Ordered record of primitive ops for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so parents always precede
/// children and a single reverse sweep visits every node once.
class Tape {
 public:
  /// Accumulates the node's gradient into its parents. `self` is the node id.
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Differentiable leaf not tied to a named parameter.
  Var leaf(Tensor value);
  /// Leaf bound to `params[name]`; repeated calls return the same node.
  Var parameter(const NamedTensors& params, const std::string& name);
  bool has_parameter(const std::string& name) const { return param_ids_.contains(name); }

  /// Appends a primitive. Throws NumericError if `value` is not finite.
  Var record(std::string_view op, Tensor value, std::vector<std::uint32_t> parents,
             BackwardFn backward);

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, zero-initialised on first access.
  Tensor& grad(std::uint32_t id);
  bool has_grad(std::uint32_t id) const { return nodes_[id].has_grad; }
  std::string_view op(std::uint32_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  /// Runs the reverse sweep from a scalar `loss` without resetting.
  void propagate(Var loss);
  /// Gradient of a node after propagate(); zeros if it was never reached.
  Tensor gradient(Var v) const;

  /// propagate(), collect one gradient per entry of `params` (zeros for
  /// parameters that never reached the loss), then reset the tape.
  GradientMap backward(Var loss, const NamedTensors& params);

  void reset();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::uint32_t> parents;
    BackwardFn backward;
    std::string op;
  };

  std::deque<Node> nodes_;
  std::unordered_map<std::string, std::uint32_t> param_ids_;
};

// Primitive ops. Binary elementwise ops accept equal shapes or a rank-0
// scalar against any tensor; no other broadcasting.

Var matmul(Var a, Var b);
/// base + a * b with base shaped like the product.
Var matmul_acc(Var base, Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// a[..., n] + bias[n], the bias repeated over every leading index.
Var add_bias(Var a, Var bias);

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);

/// Fused LSTM step on pre-activations [B, 4H] in gate order i, f, o, c:
/// lstm_gates applies sigmoid to the first 3H columns and tanh to the last H,
/// lstm_cell gives c = f * c_prev + i * g and lstm_output gives h = o * tanh(c).
Var lstm_gates(Var pre);
Var lstm_cell(Var gates, Var c_prev);
Var lstm_output(Var gates, Var c);

/// Softmax over the last dimension, max-subtracted.
Var softmax(Var a);
/// log(softmax(a)) over the last dimension via log-sum-exp.
Var log_softmax(Var a);

Var sum(Var a);
Var mean(Var a);

Var reshape(Var a, Shape shape);
/// Columns [begin, begin+count) of a matrix.
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// Leading-axis slice [begin, begin+count).
Var slice_rows(Var a, std::size_t begin, std::size_t count);
/// Stacks equally shaped values along a new leading axis.
Var stack(std::span<const Var> parts);

/// Causal dilated 1-D convolution on a time-major batch.
///   x: [T, B, C_in], weight: [k, C_in, C_out], bias: [C_out] -> [T, B, C_out]
///   out[t] = bias + sum_i x[t - dilation*i] * weight[i], zero for t - d*i < 0.
Var causal_conv1d(Var x, Var weight, Var bias, std::size_t dilation);

/// Batch normalisation over every axis but the last, using batch statistics.
/// Biased batch mean/variance are written to the optional outputs.
Var batch_norm_train(Var x, Var gamma, Var beta, double eps, Tensor* batch_mean = nullptr,
                     Tensor* batch_var = nullptr);
/// Batch normalisation with fixed statistics.
Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var,
                    double eps);

/// Per-row convex combination of expert outputs.
///   experts: [n, B, H], weights: [B, n] -> [B, H]
Var mix_experts(Var experts, Var weights);

namespace debug {
/// Doubles the incoming gradient of every node recorded under `op` during
/// backward sweeps. Used to check that gradient checking catches faults.
void set_gradient_fault(std::string op);
void clear_gradient_fault();
}  // namespace debug

}  // namespace tmmoe
