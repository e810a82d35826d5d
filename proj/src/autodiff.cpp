#include "tmmoe/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace tmmoe {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

std::string& fault_op() {
  static std::string op;
  return op;
}

ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
Eigen::Map<const Eigen::ArrayXd> as_array(const Tensor& t) {
  return Eigen::Map<const Eigen::ArrayXd>(t.raw(), static_cast<Eigen::Index>(t.size()));
}
Eigen::Map<Eigen::ArrayXd> as_array(Tensor& t) {
  return Eigen::Map<Eigen::ArrayXd>(t.raw(), static_cast<Eigen::Index>(t.size()));
}
ConstVecMap as_vector(const Tensor& t) {
  return ConstVecMap(t.raw(), static_cast<Eigen::Index>(t.size()));
}
VecMap as_vector(Tensor& t) { return VecMap(t.raw(), static_cast<Eigen::Index>(t.size())); }

// Column sums in a fixed row order. Eigen's vectorised reductions pick their
// summation order from the data alignment, which breaks bit-reproducibility.
Eigen::RowVectorXd column_sums(const double* data, std::size_t rows, std::size_t cols) {
  Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = data + r * cols;
    for (std::size_t c = 0; c < cols; ++c) s[static_cast<Eigen::Index>(c)] += row[c];
  }
  return s;
}
template <typename Expr>
Eigen::RowVectorXd column_sums(const Expr& expr) {
  const RowMat m = expr;
  return column_sums(m.data(), static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
}
Eigen::RowVectorXd inverse_std(const Eigen::RowVectorXd& var, double eps) {
  Eigen::RowVectorXd r(var.size());
  for (Eigen::Index i = 0; i < var.size(); ++i) r[i] = 1.0 / std::sqrt(var[i] + eps);
  return r;
}

template <typename F>
void accumulate(Tape& tape, std::uint32_t id, F&& f) {
  if (tape.requires_grad(id)) f(tape.grad(id));
}

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw std::invalid_argument("operands recorded on different tapes");
  }
  return a.tape();
}

bool is_scalar(const Tensor& t) { return t.rank() == 0; }

enum class Binary { kAdd, kSub, kMul };

Var binary(Var a, Var b, Binary kind, std::string_view name) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool a_scalar = is_scalar(av) && !is_scalar(bv);
  const bool b_scalar = is_scalar(bv) && !is_scalar(av);
  if (!a_scalar && !b_scalar && av.shape() != bv.shape()) {
    throw DimensionError(std::string(name) + ": incompatible shapes " + shape_str(av.shape()) +
                         " and " + shape_str(bv.shape()));
  }
  Tensor out(a_scalar ? bv.shape() : av.shape());
  const double as = a_scalar ? av[0] : 0.0;
  const double bs = b_scalar ? bv[0] : 0.0;
  auto o = as_array(out);
  if (a_scalar || b_scalar) {
    const auto& full = a_scalar ? bv : av;
    const double s = a_scalar ? as : bs;
    const auto f = as_array(full);
    switch (kind) {
      case Binary::kAdd: o = f + s; break;
      case Binary::kSub:
        if (a_scalar) {
          o = s - f;
        } else {
          o = f - s;
        }
        break;
      case Binary::kMul: o = f * s; break;
    }
  } else {
    const auto x = as_array(av), y = as_array(bv);
    switch (kind) {
      case Binary::kAdd: o = x + y; break;
      case Binary::kSub: o = x - y; break;
      case Binary::kMul: o = x * y; break;
    }
  }
  const std::uint32_t ia = a.id();
  const std::uint32_t ib = b.id();
  return tape.record(name, std::move(out), {ia, ib},
                     [ia, ib, a_scalar, b_scalar, kind](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const std::size_t n = g.size();
    // Each operand's gradient: d(out)/d(operand) * g, summed over the
    // broadcast axis when the operand is a scalar.
    auto push = [&](std::uint32_t id, bool scalar, bool is_a) {
      accumulate(t, id, [&](Tensor& ga) {
        const Tensor& other = t.value(is_a ? ib : ia);
        const bool other_scalar = is_a ? b_scalar : a_scalar;
        if (!scalar && !other_scalar) {
          auto dst = as_array(ga);
          const auto src = as_array(g);
          if (kind == Binary::kMul) {
            dst += src * as_array(other);
          } else if (kind == Binary::kSub && !is_a) {
            dst -= src;
          } else {
            dst += src;
          }
          return;
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          double d = 1.0;
          if (kind == Binary::kSub && !is_a) d = -1.0;
          if (kind == Binary::kMul) d = other_scalar ? other[0] : other[i];
          if (scalar) {
            acc += d * g[i];
          } else {
            ga[i] += d * g[i];
          }
        }
        if (scalar) ga[0] += acc;
      });
    };
    push(ia, a_scalar, true);
    push(ib, b_scalar, false);
  });
}

template <typename Fwd, typename Deriv>
Var unary(Var a, std::string_view name, Fwd fwd, Deriv deriv) {
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const std::uint32_t ia = a.id();
  return tape.record(name, std::move(out), {ia}, [ia, deriv](Tape& t, std::uint32_t self) {
    accumulate(t, ia, [&](Tensor& ga) {
      const Tensor& g = t.grad(self);
      const Tensor& x = t.value(ia);
      const Tensor& y = t.value(self);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
    });
  });
}

// Elementwise map over fixed 8-wide blocks copied through a local buffer, so
// every element takes the same vector code path whatever the buffer alignment.
template <typename F>
void blockwise(const double* x, double* y, std::size_t n, F f) {
  using Block = Eigen::Array<double, 8, 1>;
  Block b;
  for (std::size_t i = 0; i < n; i += 8) {
    const std::size_t m = std::min<std::size_t>(8, n - i);
    b.setZero();
    std::copy(x + i, x + i + m, b.data());
    b = f(b);
    std::copy(b.data(), b.data() + m, y + i);
  }
}

void sigmoid_into(const double* x, double* y, std::size_t n) {
  blockwise(x, y, n, [](const auto& v) { return (1.0 / (1.0 + (-v).exp())).eval(); });
}

// 1 - 2 / (e^{2x} + 1); saturates to +-1 where e^{2x} overflows or vanishes.
void tanh_into(const double* x, double* y, std::size_t n) {
  blockwise(x, y, n, [](const auto& v) { return (1.0 - 2.0 / ((2.0 * v).exp() + 1.0)).eval(); });
}

std::size_t last_dim(const Tensor& t, std::string_view op) {
  if (t.rank() == 0) throw DimensionError(std::string(op) + " needs rank >= 1");
  return t.shape().back();
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  value.check_finite("constant");
  Node node;
  node.value = std::move(value);
  node.op = "constant";
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor value) {
  value.check_finite("leaf");
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  node.op = "leaf";
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::parameter(const NamedTensors& params, const std::string& name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var(this, it->second);
  const Tensor& value = params.get(name);
  value.check_finite("parameter " + name);
  Node node;
  node.value = value;
  node.requires_grad = true;
  node.op = "parameter";
  nodes_.push_back(std::move(node));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_ids_.emplace(name, id);
  return Var(this, id);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<std::uint32_t> parents,
                 BackwardFn backward) {
  value.check_finite(op);
  Node node;
  node.value = std::move(value);
  node.requires_grad = std::any_of(parents.begin(), parents.end(),
                                   [this](std::uint32_t p) { return nodes_[p].requires_grad; });
  node.parents = std::move(parents);
  if (node.requires_grad) node.backward = std::move(backward);
  node.op = std::string(op);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor& Tape::grad(std::uint32_t id) {
  Node& node = nodes_[id];
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return node.grad;
}

void Tape::propagate(Var loss) {
  if (&loss.tape() != this) throw std::invalid_argument("loss recorded on another tape");
  if (loss.value().size() != 1) {
    throw DimensionError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  grad(loss.id()).fill(1.0);
  const std::string& faulty = fault_op();
  for (std::int64_t id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.has_grad || !node.backward) continue;
    if (!faulty.empty() && node.op == faulty) {
      for (double& g : node.grad.data()) g *= 2.0;
    }
    node.backward(*this, static_cast<std::uint32_t>(id));
  }
}

Tensor Tape::gradient(Var v) const {
  const Node& node = nodes_[v.id()];
  return node.has_grad ? node.grad : Tensor(node.value.shape(), 0.0);
}

GradientMap Tape::backward(Var loss, const NamedTensors& params) {
  propagate(loss);
  GradientMap grads;
  for (const auto& [name, value] : params) {
    auto it = param_ids_.find(name);
    if (it != param_ids_.end() && nodes_[it->second].has_grad) {
      grads.set(name, std::move(nodes_[it->second].grad));
    } else {
      grads.set(name, Tensor(value.shape(), 0.0));
    }
  }
  reset();
  return grads;
}

void Tape::reset() {
  nodes_.clear();
  param_ids_.clear();
}

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n});
  if (k > 0) as_matrix(out, m, n).noalias() = as_matrix(av, m, k) * as_matrix(bv, k, n);
  const std::uint32_t ia = a.id(), ib = b.id();
  return tape.record("matmul", std::move(out), {ia, ib},
                     [ia, ib, m, k, n](Tape& t, std::uint32_t self) {
    if (k == 0) return;
    const auto g = as_matrix(t.grad(self), m, n);
    accumulate(t, ia, [&](Tensor& ga) {
      as_matrix(ga, m, k).noalias() += g * as_matrix(t.value(ib), k, n).transpose();
    });
    accumulate(t, ib, [&](Tensor& gb) {
      as_matrix(gb, k, n).noalias() += as_matrix(t.value(ia), m, k).transpose() * g;
    });
  });
}

Var matmul_acc(Var base, Var a, Var b) {
  same_tape(a, b);
  Tape& tape = same_tape(base, a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Tensor& cv = base.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0) ||
      cv.shape() != Shape{av.dim(0), bv.dim(1)}) {
    throw DimensionError("matmul_acc: incompatible shapes " + shape_str(cv.shape()) + ", " +
                         shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out = cv;
  if (k > 0) as_matrix(out, m, n).noalias() += as_matrix(av, m, k) * as_matrix(bv, k, n);
  const std::uint32_t ic = base.id(), ia = a.id(), ib = b.id();
  return tape.record("matmul_acc", std::move(out), {ic, ia, ib},
                     [ic, ia, ib, m, k, n](Tape& t, std::uint32_t self) {
    const auto g = as_matrix(t.grad(self), m, n);
    accumulate(t, ic, [&](Tensor& gc) { as_matrix(gc, m, n) += g; });
    if (k == 0) return;
    accumulate(t, ia, [&](Tensor& ga) {
      as_matrix(ga, m, k).noalias() += g * as_matrix(t.value(ib), k, n).transpose();
    });
    accumulate(t, ib, [&](Tensor& gb) {
      as_matrix(gb, k, n).noalias() += as_matrix(t.value(ia), m, k).transpose() * g;
    });
  });
}

Var add(Var a, Var b) { return binary(a, b, Binary::kAdd, "add"); }
Var sub(Var a, Var b) { return binary(a, b, Binary::kSub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, Binary::kMul, "mul"); }

Var scale(Var a, double factor) {
  return unary(a, "scale", [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Var add_bias(Var a, Var bias) {
  Tape& tape = same_tape(a, bias);
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (bv.rank() != 1 || av.rank() == 0 || av.shape().back() != bv.size()) {
    throw DimensionError("add_bias: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  const std::size_t n = bv.size();
  const std::size_t rows = n ? av.size() / n : 0;
  Tensor out = av;
  if (n) as_matrix(out, rows, n).rowwise() += as_vector(bv).transpose();
  const std::uint32_t ia = a.id(), ib = bias.id();
  return tape.record("add_bias", std::move(out), {ia, ib},
                     [ia, ib, rows, n](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, ia, [&](Tensor& ga) { as_vector(ga) += as_vector(g); });
    accumulate(t, ib, [&](Tensor& gb) {
      if (n) as_vector(gb) += column_sums(g.raw(), rows, n).transpose();
    });
  });
}

Var sigmoid(Var a) {
  Tape& tape = a.tape();
  Tensor out(a.value().shape());
  sigmoid_into(a.value().raw(), out.raw(), out.size());
  const std::uint32_t ia = a.id();
  return tape.record("sigmoid", std::move(out), {ia}, [ia](Tape& t, std::uint32_t self) {
    accumulate(t, ia, [&](Tensor& ga) {
      const auto y = as_array(t.value(self));
      as_array(ga) += as_array(t.grad(self)) * y * (1.0 - y);
    });
  });
}

Var tanh(Var a) {
  Tape& tape = a.tape();
  Tensor out(a.value().shape());
  tanh_into(a.value().raw(), out.raw(), out.size());
  const std::uint32_t ia = a.id();
  return tape.record("tanh", std::move(out), {ia}, [ia](Tape& t, std::uint32_t self) {
    accumulate(t, ia, [&](Tensor& ga) {
      const auto y = as_array(t.value(self));
      as_array(ga) += as_array(t.grad(self)) * (1.0 - y.square());
    });
  });
}

Var lstm_gates(Var pre) {
  Tape& tape = pre.tape();
  const Tensor& pv = pre.value();
  if (pv.rank() != 2 || pv.dim(1) % 4 != 0) {
    throw DimensionError("lstm_gates: expected [B, 4H], got " + shape_str(pv.shape()));
  }
  const std::size_t rows = pv.dim(0), h = pv.dim(1) / 4;
  Tensor out(pv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    sigmoid_into(pv.raw() + r * 4 * h, out.raw() + r * 4 * h, 3 * h);
    tanh_into(pv.raw() + r * 4 * h + 3 * h, out.raw() + r * 4 * h + 3 * h, h);
  }
  const std::uint32_t ia = pre.id();
  return tape.record("lstm_gates", std::move(out), {ia}, [ia, rows, h](Tape& t, std::uint32_t self) {
    accumulate(t, ia, [&](Tensor& ga) {
      const auto y = as_matrix(t.value(self), rows, 4 * h).array();
      const auto g = as_matrix(t.grad(self), rows, 4 * h).array();
      auto d = as_matrix(ga, rows, 4 * h).array();
      const auto n3 = static_cast<Eigen::Index>(3 * h), n1 = static_cast<Eigen::Index>(h);
      d.leftCols(n3) += g.leftCols(n3) * y.leftCols(n3) * (1.0 - y.leftCols(n3));
      d.rightCols(n1) += g.rightCols(n1) * (1.0 - y.rightCols(n1).square());
    });
  });
}

Var lstm_cell(Var gates, Var c_prev) {
  Tape& tape = same_tape(gates, c_prev);
  const Tensor& gv = gates.value();
  const Tensor& cv = c_prev.value();
  if (gv.rank() != 2 || gv.dim(1) % 4 != 0 || cv.shape() != Shape{gv.dim(0), gv.dim(1) / 4}) {
    throw DimensionError("lstm_cell: gates " + shape_str(gv.shape()) + " and state " +
                         shape_str(cv.shape()));
  }
  const std::size_t rows = gv.dim(0), h = gv.dim(1) / 4;
  const auto n = static_cast<Eigen::Index>(h);
  Tensor out(cv.shape());
  {
    const auto gm = as_matrix(gv, rows, 4 * h).array();
    as_matrix(out, rows, h).array() = gm.middleCols(n, n) * as_matrix(cv, rows, h).array() +
                                      gm.leftCols(n) * gm.rightCols(n);
  }
  const std::uint32_t ig = gates.id(), ic = c_prev.id();
  return tape.record("lstm_cell", std::move(out), {ig, ic}, [ig, ic, rows, h, n](Tape& t, std::uint32_t self) {
    const auto g = as_matrix(t.grad(self), rows, h).array();
    const auto gm = as_matrix(t.value(ig), rows, 4 * h).array();
    accumulate(t, ig, [&](Tensor& dg) {
      auto d = as_matrix(dg, rows, 4 * h).array();
      d.leftCols(n) += g * gm.rightCols(n);
      d.middleCols(n, n) += g * as_matrix(t.value(ic), rows, h).array();
      d.rightCols(n) += g * gm.leftCols(n);
    });
    accumulate(t, ic, [&](Tensor& dc) { as_matrix(dc, rows, h).array() += g * gm.middleCols(n, n); });
  });
}

Var lstm_output(Var gates, Var c) {
  Tape& tape = same_tape(gates, c);
  const Tensor& gv = gates.value();
  const Tensor& cv = c.value();
  if (gv.rank() != 2 || gv.dim(1) % 4 != 0 || cv.shape() != Shape{gv.dim(0), gv.dim(1) / 4}) {
    throw DimensionError("lstm_output: gates " + shape_str(gv.shape()) + " and state " +
                         shape_str(cv.shape()));
  }
  const std::size_t rows = gv.dim(0), h = gv.dim(1) / 4;
  const auto n = static_cast<Eigen::Index>(h);
  Tensor tc(cv.shape());
  tanh_into(cv.raw(), tc.raw(), tc.size());
  Tensor out(cv.shape());
  as_matrix(out, rows, h).array() =
      as_matrix(gv, rows, 4 * h).array().middleCols(2 * n, n) * as_matrix(tc, rows, h).array();
  const std::uint32_t ig = gates.id(), ic = c.id();
  return tape.record("lstm_output", std::move(out), {ig, ic},
                     [ig, ic, rows, h, n, tc = std::move(tc)](Tape& t, std::uint32_t self) {
    const auto g = as_matrix(t.grad(self), rows, h).array();
    const auto th = as_matrix(tc, rows, h).array();
    accumulate(t, ig, [&](Tensor& dg) {
      as_matrix(dg, rows, 4 * h).array().middleCols(2 * n, n) += g * th;
    });
    accumulate(t, ic, [&](Tensor& dc) {
      const auto o = as_matrix(t.value(ig), rows, 4 * h).array().middleCols(2 * n, n);
      as_matrix(dc, rows, h).array() += g * o * (1.0 - th.square());
    });
  });
}

Var relu(Var a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, "log", [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, "square", [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var softmax(Var a) {
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  const std::size_t n = last_dim(av, "softmax");
  const std::size_t rows = n ? av.size() / n : 0;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.raw() + r * n;
    double* y = out.raw() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  const std::uint32_t ia = a.id();
  return tape.record("softmax", std::move(out), {ia}, [ia, rows, n](Tape& t, std::uint32_t self) {
    accumulate(t, ia, [&](Tensor& ga) {
      const Tensor& g = t.grad(self);
      const Tensor& y = t.value(self);
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
      }
    });
  });
}

Var log_softmax(Var a) {
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  const std::size_t n = last_dim(av, "log_softmax");
  const std::size_t rows = n ? av.size() / n : 0;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.raw() + r * n;
    double* y = out.raw() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
  }
  const std::uint32_t ia = a.id();
  return tape.record("log_softmax", std::move(out), {ia},
                     [ia, rows, n](Tape& t, std::uint32_t self) {
    accumulate(t, ia, [&](Tensor& ga) {
      const Tensor& g = t.grad(self);
      const Tensor& y = t.value(self);
      for (std::size_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) gsum += g[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          ga[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * gsum;
        }
      }
    });
  });
}

Var sum(Var a) {
  Tape& tape = a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::uint32_t ia = a.id();
  return tape.record("sum", Tensor::scalar(s), {ia}, [ia](Tape& t, std::uint32_t self) {
    accumulate(t, ia, [&](Tensor& ga) {
      const double g = t.grad(self)[0];
      for (double& v : ga.data()) v += g;
    });
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var reshape(Var a, Shape shape) {
  Tape& tape = a.tape();
  Tensor out = a.value().reshaped(std::move(shape));
  const std::uint32_t ia = a.id();
  return tape.record("reshape", std::move(out), {ia}, [ia](Tape& t, std::uint32_t self) {
    accumulate(t, ia, [&](Tensor& ga) { as_vector(ga) += as_vector(t.grad(self)); });
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  if (av.rank() != 2 || begin + count > av.dim(1)) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") out of range for " + shape_str(av.shape()));
  }
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor out(Shape{m, count});
  as_matrix(out, m, count) = as_matrix(av, m, n).middleCols(static_cast<Eigen::Index>(begin),
                                                             static_cast<Eigen::Index>(count));
  const std::uint32_t ia = a.id();
  return tape.record("slice_cols", std::move(out), {ia},
                     [ia, m, n, begin, count](Tape& t, std::uint32_t self) {
    accumulate(t, ia, [&](Tensor& ga) {
      as_matrix(ga, m, n).middleCols(static_cast<Eigen::Index>(begin),
                                     static_cast<Eigen::Index>(count)) +=
          as_matrix(t.grad(self), m, count);
    });
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  if (av.rank() == 0 || begin + count > av.dim(0)) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") out of range for " + shape_str(av.shape()));
  }
  const std::size_t stride = av.dim(0) ? av.size() / av.dim(0) : 0;
  Shape shape = av.shape();
  shape[0] = count;
  std::vector<double> data(av.raw() + begin * stride, av.raw() + (begin + count) * stride);
  const std::uint32_t ia = a.id();
  return tape.record("slice_rows", Tensor(std::move(shape), std::move(data)), {ia},
                     [ia, begin, stride](Tape& t, std::uint32_t self) {
    accumulate(t, ia, [&](Tensor& ga) {
      const Tensor& g = t.grad(self);
      double* dst = ga.raw() + begin * stride;
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    });
  });
}

Var stack(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("stack of zero tensors");
  Tape& tape = parts[0].tape();
  const Shape& inner = parts[0].shape();
  const std::size_t stride = shape_size(inner);
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  Tensor out(shape);
  std::vector<std::uint32_t> ids;
  ids.reserve(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (&parts[i].tape() != &tape) throw std::invalid_argument("stack across tapes");
    if (parts[i].shape() != inner) {
      throw DimensionError("stack: shape " + shape_str(parts[i].shape()) + " differs from " +
                           shape_str(inner));
    }
    std::copy_n(parts[i].value().raw(), stride, out.raw() + i * stride);
    ids.push_back(parts[i].id());
  }
  std::vector<std::uint32_t> parents = ids;
  return tape.record("stack", std::move(out), std::move(parents),
                     [ids = std::move(ids), stride](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      accumulate(t, ids[i], [&](Tensor& gi) {
        const double* src = g.raw() + i * stride;
        for (std::size_t j = 0; j < stride; ++j) gi[j] += src[j];
      });
    }
  });
}

Var causal_conv1d(Var x, Var weight, Var bias, std::size_t dilation) {
  Tape& tape = same_tape(x, weight);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 3 || wv.rank() != 3 || bv.rank() != 1 || wv.dim(1) != xv.dim(2) ||
      bv.size() != wv.dim(2)) {
    throw DimensionError("causal_conv1d: incompatible shapes x" + shape_str(xv.shape()) + " w" +
                         shape_str(wv.shape()) + " b" + shape_str(bv.shape()));
  }
  if (dilation == 0) throw std::invalid_argument("causal_conv1d: dilation must be >= 1");
  const std::size_t steps = xv.dim(0), batch = xv.dim(1), cin = xv.dim(2);
  const std::size_t taps = wv.dim(0), cout = wv.dim(2);
  const std::size_t rows = steps * batch;
  Tensor out(Shape{steps, batch, cout});
  auto o = as_matrix(out, rows, cout);
  o.rowwise() = as_vector(bv).transpose();
  const auto xm = as_matrix(xv, rows, cin);
  for (std::size_t i = 0; i < taps; ++i) {
    const std::size_t shift = dilation * i;
    if (shift >= steps) break;
    const auto r = static_cast<Eigen::Index>((steps - shift) * batch);
    const ConstMatMap wi(wv.raw() + i * cin * cout, static_cast<Eigen::Index>(cin),
                         static_cast<Eigen::Index>(cout));
    o.bottomRows(r).noalias() += xm.topRows(r) * wi;
  }
  const std::uint32_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return tape.record("causal_conv1d", std::move(out), {ix, iw, ib},
                     [=](Tape& t, std::uint32_t self) {
    const auto g = as_matrix(t.grad(self), rows, cout);
    accumulate(t, ib, [&](Tensor& gb) { as_vector(gb) += column_sums(g).transpose(); });
    for (std::size_t i = 0; i < taps; ++i) {
      const std::size_t shift = dilation * i;
      if (shift >= steps) break;
      const auto r = static_cast<Eigen::Index>((steps - shift) * batch);
      accumulate(t, ix, [&](Tensor& gx) {
        const ConstMatMap wi(t.value(iw).raw() + i * cin * cout, static_cast<Eigen::Index>(cin),
                             static_cast<Eigen::Index>(cout));
        as_matrix(gx, rows, cin).topRows(r).noalias() += g.bottomRows(r) * wi.transpose();
      });
      accumulate(t, iw, [&](Tensor& gw) {
        MatMap gwi(gw.raw() + i * cin * cout, static_cast<Eigen::Index>(cin),
                   static_cast<Eigen::Index>(cout));
        gwi.noalias() += as_matrix(t.value(ix), rows, cin).topRows(r).transpose() * g.bottomRows(r);
      });
    }
  });
}

Var batch_norm_train(Var x, Var gamma, Var beta, double eps, Tensor* batch_mean,
                     Tensor* batch_var) {
  Tape& tape = same_tape(x, gamma);
  const Tensor& xv = x.value();
  const std::size_t c = last_dim(xv, "batch_norm");
  if (gamma.value().shape() != Shape{c} || beta.value().shape() != Shape{c}) {
    throw DimensionError("batch_norm: affine parameters must have shape [" + std::to_string(c) +
                         "], input " + shape_str(xv.shape()));
  }
  const std::size_t m = xv.size() / c;
  if (m == 0) throw DimensionError("batch_norm over an empty batch");
  const auto xm = as_matrix(xv, m, c);
  const Eigen::RowVectorXd mu = column_sums(xv.raw(), m, c) / static_cast<double>(m);
  const Eigen::RowVectorXd var =
      column_sums((xm.rowwise() - mu).array().square().matrix()) / static_cast<double>(m);
  const Eigen::RowVectorXd inv_std = inverse_std(var, eps);
  Tensor xhat(xv.shape());
  as_matrix(xhat, m, c) = ((xm.rowwise() - mu).array().rowwise() * inv_std.array()).matrix();
  Tensor out(xv.shape());
  as_matrix(out, m, c) =
      ((as_matrix(xhat, m, c).array().rowwise() * as_vector(gamma.value()).transpose().array())
           .rowwise() +
       as_vector(beta.value()).transpose().array())
          .matrix();
  if (batch_mean) {
    *batch_mean = Tensor(Shape{c});
    as_vector(*batch_mean) = mu.transpose();
  }
  if (batch_var) {
    *batch_var = Tensor(Shape{c});
    as_vector(*batch_var) = var.transpose();
  }
  const std::uint32_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return tape.record("batch_norm", std::move(out), {ix, ig, ib},
                     [ix, ig, ib, m, c, xhat = std::move(xhat), inv_std](Tape& t,
                                                                         std::uint32_t self) {
    const auto g = as_matrix(t.grad(self), m, c);
    const auto xh = as_matrix(xhat, m, c);
    accumulate(t, ib, [&](Tensor& gb) { as_vector(gb) += column_sums(g).transpose(); });
    accumulate(t, ig, [&](Tensor& gg) {
      as_vector(gg) += column_sums((g.array() * xh.array()).matrix()).transpose();
    });
    accumulate(t, ix, [&](Tensor& gx) {
      const Eigen::RowVectorXd gam = as_vector(t.value(ig)).transpose();
      const RowMat dxhat = (g.array().rowwise() * gam.array()).matrix();
      const Eigen::RowVectorXd sum_d = column_sums(dxhat);
      const Eigen::RowVectorXd sum_dx = column_sums((dxhat.array() * xh.array()).matrix());
      const double inv_m = 1.0 / static_cast<double>(m);
      auto gxm = as_matrix(gx, m, c);
      gxm.array() +=
          ((dxhat.array() - (xh.array().rowwise() * sum_dx.array()) * inv_m).rowwise() -
           sum_d.array() * inv_m)
              .rowwise() *
          inv_std.array();
    });
  });
}

Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& mean_v, const Tensor& var_v,
                    double eps) {
  Tape& tape = same_tape(x, gamma);
  const Tensor& xv = x.value();
  const std::size_t c = last_dim(xv, "batch_norm");
  if (gamma.value().shape() != Shape{c} || beta.value().shape() != Shape{c} ||
      mean_v.shape() != Shape{c} || var_v.shape() != Shape{c}) {
    throw DimensionError("batch_norm: statistics must have shape [" + std::to_string(c) + "]");
  }
  const std::size_t m = xv.size() / c;
  const Eigen::RowVectorXd mu = as_vector(mean_v).transpose();
  const Eigen::RowVectorXd inv_std = inverse_std(as_vector(var_v).transpose(), eps);
  Tensor xhat(xv.shape());
  as_matrix(xhat, m, c) =
      ((as_matrix(xv, m, c).rowwise() - mu).array().rowwise() * inv_std.array()).matrix();
  Tensor out(xv.shape());
  as_matrix(out, m, c) =
      ((as_matrix(xhat, m, c).array().rowwise() * as_vector(gamma.value()).transpose().array())
           .rowwise() +
       as_vector(beta.value()).transpose().array())
          .matrix();
  const std::uint32_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return tape.record("batch_norm_eval", std::move(out), {ix, ig, ib},
                     [ix, ig, ib, m, c, xhat = std::move(xhat), inv_std](Tape& t,
                                                                         std::uint32_t self) {
    const auto g = as_matrix(t.grad(self), m, c);
    accumulate(t, ib, [&](Tensor& gb) { as_vector(gb) += column_sums(g).transpose(); });
    accumulate(t, ig, [&](Tensor& gg) {
      as_vector(gg) +=
          column_sums((g.array() * as_matrix(xhat, m, c).array()).matrix()).transpose();
    });
    accumulate(t, ix, [&](Tensor& gx) {
      const Eigen::RowVectorXd scale_row =
          as_vector(t.value(ig)).transpose().array() * inv_std.array();
      as_matrix(gx, m, c).array() += g.array().rowwise() * scale_row.array();
    });
  });
}

Var mix_experts(Var experts, Var weights) {
  Tape& tape = same_tape(experts, weights);
  const Tensor& ev = experts.value();
  const Tensor& wv = weights.value();
  if (ev.rank() != 3 || wv.rank() != 2 || wv.dim(0) != ev.dim(1) || wv.dim(1) != ev.dim(0)) {
    throw DimensionError("mix_experts: incompatible shapes experts" + shape_str(ev.shape()) +
                         " weights" + shape_str(wv.shape()));
  }
  const std::size_t n = ev.dim(0), batch = ev.dim(1), h = ev.dim(2);
  Tensor out(Shape{batch, h});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t b = 0; b < batch; ++b) {
      const double w = wv[b * n + i];
      const double* e = ev.raw() + (i * batch + b) * h;
      double* o = out.raw() + b * h;
      for (std::size_t j = 0; j < h; ++j) o[j] += w * e[j];
    }
  }
  const std::uint32_t ie = experts.id(), iw = weights.id();
  return tape.record("mix_experts", std::move(out), {ie, iw},
                     [ie, iw, n, batch, h](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, ie, [&](Tensor& ge) {
      const Tensor& w = t.value(iw);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t b = 0; b < batch; ++b) {
          const double wi = w[b * n + i];
          double* dst = ge.raw() + (i * batch + b) * h;
          const double* src = g.raw() + b * h;
          for (std::size_t j = 0; j < h; ++j) dst[j] += wi * src[j];
        }
    });
    accumulate(t, iw, [&](Tensor& gw) {
      const Tensor& e = t.value(ie);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t b = 0; b < batch; ++b) {
          const double* er = e.raw() + (i * batch + b) * h;
          const double* src = g.raw() + b * h;
          double acc = 0.0;
          for (std::size_t j = 0; j < h; ++j) acc += er[j] * src[j];
          gw[b * n + i] += acc;
        }
    });
  });
}

namespace debug {
void set_gradient_fault(std::string op) { fault_op() = std::move(op); }
void clear_gradient_fault() { fault_op().clear(); }
}  // namespace debug

}  // namespace tmmoe
