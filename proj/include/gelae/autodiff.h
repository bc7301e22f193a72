#pragma once

// Minimal dense-tensor engine with reverse-mode differentiation.
//
// A Tape records operations in execution order; backward() replays their
// gradient rules in exact reverse order. Parameters live outside the tape as
// plain Tensors and are attached with Tape::parameter(); their gradients are
// accumulated into Tensor::grad() when backward() runs. A tape is meant to be
// rebuilt for every forward pass and is not thread-safe.
//
// Tensors are row-major float64 of rank 0..3. Operations that act "per row"
// (softmax_rows, layer_norm, matmul against a weight matrix) treat all
// leading dimensions as a flattened row index.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gelae::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t row, std::size_t col) {
    return values_[row * shape_.back() + col];
  }
  double at(std::size_t row, std::size_t col) const {
    return values_[row * shape_.back() + col];
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  /// Allocates the gradient buffer if needed and fills it with zeros.
  void zero_grad();

 private:
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Gradient rule of one recorded operation. It reads the output gradient and
/// input values from the tape and accumulates into the inputs' gradients.
using BackwardFn = std::function<void(Tape&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Attaches an externally owned parameter. The tensor must outlive the
  /// tape and must not be resized while the tape is alive.
  Var parameter(Tensor& param);

  /// Records an operation output. `backward` may be empty for outputs that
  /// need no gradient.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  /// Gradient buffer of a node, allocated (zeroed) on first access.
  std::span<double> grad(Var v);
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every gradient rule in reverse
  /// recording order. Parameter gradients are added (+=) into the attached
  /// tensors. Throws std::invalid_argument when the loss is not a scalar.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor* param = nullptr;
    std::vector<double> grad;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool needs_grad = false;
  };
  std::deque<Node> nodes_;
};

// ---- operations -----------------------------------------------------------

/// a[..., k] x b[k, n] -> [..., n]. Leading dimensions of `a` are flattened.
Var matmul(Tape& t, Var a, Var b);
/// Batched product: a[B, m, k] x b[B, k, n] -> [B, m, n].
Var bmm(Tape& t, Var a, Var b);
/// Batched product with the second operand transposed:
/// a[B, m, k] x b[B, n, k]^T -> [B, m, n].
Var bmm_nt(Tape& t, Var a, Var b);

Var add(Tape& t, Var a, Var b);
Var hadamard(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double factor);
/// x[..., n] + bias[n], the bias broadcast over every leading index.
Var add_bias(Tape& t, Var x, Var bias);
Var relu(Tape& t, Var a);
Var tanh(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);

/// Concatenates along the last axis. Leading dimensions must agree.
Var concat_cols(Tape& t, std::span<const Var> parts);
/// Columns [start, start + width) of the last axis.
Var slice_cols(Tape& t, Var x, std::size_t start, std::size_t width);
Var reshape(Tape& t, Var x, Shape shape);

/// Softmax over the last axis with row-max subtraction.
Var softmax_rows(Tape& t, Var s);
/// (x - mean) / sqrt(var + eps) * gain + bias over the last axis, variance
/// normalised by 1/r.
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5);

Var sum(Tape& t, Var x);
/// -sum_i sum_c y_ic * log(max(p_ic, 1e-12)) over a batch of probability
/// rows. Every row of `one_hot` must contain exactly one 1.
Var cross_entropy_sum(Tape& t, Var probs, const Tensor& one_hot);
/// (1/n) sum_i |target_i - pred_i|. The subgradient at a zero residual is 0.
Var mean_abs_error(Tape& t, Var pred, const Tensor& target);

// ---- finite-difference checking -------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients of `build` (which must attach every
/// tensor in `params` to the supplied tape and return a scalar loss) with
/// central differences (f(x+h) - f(x-h)) / 2h on every coordinate.
/// Relative error is |a - n| / max(1, |a|, |n|). Throws std::runtime_error if
/// the function value is not finite.
GradCheckResult gradient_check(const std::function<Var(Tape&)>& build,
                               std::span<Tensor* const> params,
                               double step = 1e-5);

}  // namespace gelae::ad
