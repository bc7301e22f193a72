#include "gelae/autodiff.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gelae/kernels.h"

namespace gelae::ad {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
  if (shape_.size() > 3) throw std::invalid_argument("tensor rank above 3");
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.size() > 3) throw std::invalid_argument("tensor rank above 3");
  if (values_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor value count " +
                                std::to_string(values_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

void Tensor::zero_grad() { grad_.assign(values_.size(), 0.0); }

// ---- tape -----------------------------------------------------------------

Var Tape::constant(Tensor value) { return record(std::move(value), {}, {}); }

Var Tape::parameter(Tensor& param) {
  Node node;
  node.param = &param;
  node.needs_grad = param.requires_grad();
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const Var in : inputs) {
    if (in.id >= nodes_.size()) {
      throw std::logic_error("operation input recorded after its output");
    }
    node.needs_grad = node.needs_grad || nodes_[in.id].needs_grad;
  }
  node.needs_grad = node.needs_grad && static_cast<bool>(backward);
  node.inputs = std::move(inputs);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  const Node& node = nodes_.at(v.id);
  return node.param ? *node.param : node.value;
}

std::span<double> Tape::grad(Var v) {
  Node& node = nodes_.at(v.id);
  if (node.grad.empty()) node.grad.assign(value(v).size(), 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, got shape " +
                                shape_string(value(loss).shape()));
  }
  for (Node& node : nodes_) node.grad.clear();
  grad(loss)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this);
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    Node& node = nodes_[id];
    if (!node.param || !node.param->requires_grad()) continue;
    if (!node.param->has_grad()) node.param->zero_grad();
    if (node.grad.empty()) continue;
    auto dst = node.param->grad();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
  }
}

// ---- helpers --------------------------------------------------------------

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_string(a) + " and " + shape_string(b));
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

std::size_t leading_rows(const Shape& s) {
  const std::size_t cols = last_dim(s);
  return cols == 0 ? 0 : shape_size(s) / cols;
}

Shape with_last(Shape s, std::size_t last) {
  if (s.empty()) return Shape{last};
  s.back() = last;
  return s;
}

template <typename F>
Var unary(Tape& t, Var a, F&& forward, std::function<double(double x, double y)> derivative) {
  const Tensor& av = t.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = forward(av[i]);
  const Var y{t.size()};
  return t.record(std::move(out), {a}, [a, y, derivative](Tape& tape) {
    if (!tape.needs_grad(a)) return;
    const auto& x = tape.value(a);
    const auto& yv = tape.value(y);
    const auto gy = tape.grad(y);
    auto gx = tape.grad(a);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += gy[i] * derivative(x[i], yv[i]);
    }
  });
}

}  // namespace

// ---- products -------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (bv.rank() != 2 || av.rank() == 0 || last_dim(av.shape()) != bv.dim(0)) {
    shape_error("matmul", av.shape(), bv.shape());
  }
  const std::size_t m = leading_rows(av.shape());
  const std::size_t k = bv.dim(0);
  const std::size_t n = bv.dim(1);
  Tensor out(with_last(av.shape(), n));
  kernels::gemm(m, n, k, av.values().data(), bv.values().data(),
                out.values().data(), false);
  const Var c{t.size()};
  return t.record(std::move(out), {a, b}, [a, b, c, m, n, k](Tape& tape) {
    const auto gc = tape.grad(c);
    if (tape.needs_grad(a)) {
      const auto& bv = tape.value(b);
      std::vector<double> bt(k * n);
      kernels::transpose(k, n, bv.values().data(), bt.data());
      kernels::gemm(m, k, n, gc.data(), bt.data(), tape.grad(a).data(), true);
    }
    if (tape.needs_grad(b)) {
      const auto& av = tape.value(a);
      std::vector<double> at(m * k);
      kernels::transpose(m, k, av.values().data(), at.data());
      kernels::gemm(k, n, m, at.data(), gc.data(), tape.grad(b).data(), true);
    }
  });
}

Var bmm(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) ||
      av.dim(2) != bv.dim(1)) {
    shape_error("bmm", av.shape(), bv.shape());
  }
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2),
                    n = bv.dim(2);
  Tensor out(Shape{batch, m, n});
  for (std::size_t s = 0; s < batch; ++s) {
    kernels::gemm(m, n, k, av.values().data() + s * m * k,
                  bv.values().data() + s * k * n, out.values().data() + s * m * n,
                  false);
  }
  const Var c{t.size()};
  return t.record(std::move(out), {a, b},
                  [a, b, c, batch, m, n, k](Tape& tape) {
    const auto gc = tape.grad(c);
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    std::vector<double> tmp;
    if (tape.needs_grad(a)) {
      auto ga = tape.grad(a);
      tmp.resize(k * n);
      for (std::size_t s = 0; s < batch; ++s) {
        kernels::transpose(k, n, bv.values().data() + s * k * n, tmp.data());
        kernels::gemm(m, k, n, gc.data() + s * m * n, tmp.data(),
                      ga.data() + s * m * k, true);
      }
    }
    if (tape.needs_grad(b)) {
      auto gb = tape.grad(b);
      tmp.resize(m * k);
      for (std::size_t s = 0; s < batch; ++s) {
        kernels::transpose(m, k, av.values().data() + s * m * k, tmp.data());
        kernels::gemm(k, n, m, tmp.data(), gc.data() + s * m * n,
                      gb.data() + s * k * n, true);
      }
    }
  });
}

Var bmm_nt(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) ||
      av.dim(2) != bv.dim(2)) {
    shape_error("bmm_nt", av.shape(), bv.shape());
  }
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2),
                    n = bv.dim(1);
  Tensor out(Shape{batch, m, n});
  std::vector<double> tmp(k * n);
  for (std::size_t s = 0; s < batch; ++s) {
    kernels::transpose(n, k, bv.values().data() + s * n * k, tmp.data());
    kernels::gemm(m, n, k, av.values().data() + s * m * k, tmp.data(),
                  out.values().data() + s * m * n, false);
  }
  const Var c{t.size()};
  return t.record(std::move(out), {a, b},
                  [a, b, c, batch, m, n, k](Tape& tape) {
    const auto gc = tape.grad(c);
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    if (tape.needs_grad(a)) {
      auto ga = tape.grad(a);
      for (std::size_t s = 0; s < batch; ++s) {
        kernels::gemm(m, k, n, gc.data() + s * m * n,
                      bv.values().data() + s * n * k, ga.data() + s * m * k, true);
      }
    }
    if (tape.needs_grad(b)) {
      auto gb = tape.grad(b);
      std::vector<double> gct(n * m);
      for (std::size_t s = 0; s < batch; ++s) {
        kernels::transpose(m, n, gc.data() + s * m * n, gct.data());
        kernels::gemm(n, k, m, gct.data(), av.values().data() + s * m * k,
                      gb.data() + s * n * k, true);
      }
    }
  });
}

// ---- elementwise ----------------------------------------------------------

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.shape() != bv.shape()) shape_error("add", av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  const Var c{t.size()};
  return t.record(std::move(out), {a, b}, [a, b, c](Tape& tape) {
    const auto gc = tape.grad(c);
    for (const Var in : {a, b}) {
      if (!tape.needs_grad(in)) continue;
      auto g = tape.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gc[i];
    }
  });
}

Var hadamard(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.shape() != bv.shape()) shape_error("hadamard", av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  const Var c{t.size()};
  return t.record(std::move(out), {a, b}, [a, b, c](Tape& tape) {
    const auto gc = tape.grad(c);
    if (tape.needs_grad(a)) {
      const auto& bv = tape.value(b);
      auto g = tape.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gc[i] * bv[i];
    }
    if (tape.needs_grad(b)) {
      const auto& av = tape.value(a);
      auto g = tape.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gc[i] * av[i];
    }
  });
}

Var scale(Tape& t, Var a, double factor) {
  return unary(
      t, a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var add_bias(Tape& t, Var x, Var bias) {
  const Tensor& xv = t.value(x);
  const Tensor& bv = t.value(bias);
  const std::size_t cols = last_dim(xv.shape());
  if (bv.size() != cols || xv.rank() == 0) {
    shape_error("add_bias", xv.shape(), bv.shape());
  }
  Tensor out(xv.shape());
  const std::size_t rows = leading_rows(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      out[r * cols + j] = xv[r * cols + j] + bv[j];
    }
  }
  const Var c{t.size()};
  return t.record(std::move(out), {x, bias}, [x, bias, c, rows, cols](Tape& tape) {
    const auto gc = tape.grad(c);
    if (tape.needs_grad(x)) {
      auto g = tape.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gc[i];
    }
    if (tape.needs_grad(bias)) {
      auto g = tape.grad(bias);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) g[j] += gc[r * cols + j];
      }
    }
  });
}

Var relu(Tape& t, Var a) {
  return unary(
      t, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Tape& t, Var a) {
  return unary(
      t, a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Tape& t, Var a) {
  return unary(
      t, a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

// ---- layout ---------------------------------------------------------------

Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Shape& first = t.value(parts[0]).shape();
  if (first.empty()) shape_error("concat_cols", first, first);
  const std::size_t rows = leading_rows(first);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var p : parts) {
    const Shape& s = t.value(p).shape();
    if (s.size() != first.size() ||
        !std::equal(s.begin(), s.end() - 1, first.begin())) {
      shape_error("concat_cols", first, s);
    }
    widths.push_back(s.back());
    total += s.back();
  }
  Tensor out(with_last(first, total));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = t.value(parts[p]);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.values().data() + r * widths[p], widths[p],
                  out.values().data() + r * total + offset);
    }
    offset += widths[p];
  }
  const Var c{t.size()};
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), inputs,
                  [inputs, widths, c, rows, total](Tape& tape) {
    const auto gc = tape.grad(c);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
      if (tape.needs_grad(inputs[p])) {
        auto g = tape.grad(inputs[p]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < widths[p]; ++j) {
            g[r * widths[p] + j] += gc[r * total + offset + j];
          }
        }
      }
      offset += widths[p];
    }
  });
}

Var slice_cols(Tape& t, Var x, std::size_t start, std::size_t width) {
  const Tensor& xv = t.value(x);
  const std::size_t cols = last_dim(xv.shape());
  if (xv.rank() == 0 || start + width > cols || width == 0) {
    throw std::invalid_argument("slice_cols: columns [" + std::to_string(start) +
                                ", " + std::to_string(start + width) +
                                ") out of range for " + shape_string(xv.shape()));
  }
  const std::size_t rows = leading_rows(xv.shape());
  Tensor out(with_last(xv.shape(), width));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.values().data() + r * cols + start, width,
                out.values().data() + r * width);
  }
  const Var c{t.size()};
  return t.record(std::move(out), {x}, [x, c, rows, cols, start, width](Tape& tape) {
    if (!tape.needs_grad(x)) return;
    const auto gc = tape.grad(c);
    auto g = tape.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < width; ++j) {
        g[r * cols + start + j] += gc[r * width + j];
      }
    }
  });
}

Var reshape(Tape& t, Var x, Shape shape) {
  const Tensor& xv = t.value(x);
  if (shape_size(shape) != xv.size()) shape_error("reshape", xv.shape(), shape);
  Tensor out(std::move(shape),
             std::vector<double>(xv.values().begin(), xv.values().end()));
  const Var c{t.size()};
  return t.record(std::move(out), {x}, [x, c](Tape& tape) {
    if (!tape.needs_grad(x)) return;
    const auto gc = tape.grad(c);
    auto g = tape.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gc[i];
  });
}

// ---- normalisation --------------------------------------------------------

Var softmax_rows(Tape& t, Var s) {
  const Tensor& sv = t.value(s);
  const std::size_t cols = last_dim(sv.shape());
  const std::size_t rows = leading_rows(sv.shape());
  Tensor out(sv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = sv.values().data() + r * cols;
    double* o = out.values().data() + r * cols;
    const double row_max = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      o[j] = std::exp(in[j] - row_max);
      total += o[j];
    }
    for (std::size_t j = 0; j < cols; ++j) o[j] /= total;
  }
  const Var c{t.size()};
  return t.record(std::move(out), {s}, [s, c, rows, cols](Tape& tape) {
    if (!tape.needs_grad(s)) return;
    const auto& y = tape.value(c);
    const auto gy = tape.grad(c);
    auto gs = tape.grad(s);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * cols;
      double inner = 0.0;
      for (std::size_t j = 0; j < cols; ++j) inner += gy[base + j] * y[base + j];
      for (std::size_t j = 0; j < cols; ++j) {
        gs[base + j] += y[base + j] * (gy[base + j] - inner);
      }
    }
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = t.value(x);
  const std::size_t width = last_dim(xv.shape());
  if (xv.rank() == 0 || width < 2 || t.value(gain).size() != width ||
      t.value(bias).size() != width) {
    shape_error("layer_norm", xv.shape(), t.value(gain).shape());
  }
  const std::size_t rows = leading_rows(xv.shape());
  const Tensor& g = t.value(gain);
  const Tensor& b = t.value(bias);
  Tensor out(xv.shape());
  // Normalised activations and inverse deviations are kept for backward.
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.values().data() + r * width;
    double mean = 0.0;
    for (std::size_t j = 0; j < width; ++j) mean += in[j];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < width; ++j) {
      const double h = (in[j] - mean) * inv;
      (*xhat)[r * width + j] = h;
      out[r * width + j] = h * g[j] + b[j];
    }
  }
  const Var c{t.size()};
  return t.record(std::move(out), {x, gain, bias},
                  [x, gain, bias, c, rows, width, xhat, inv_std](Tape& tape) {
    const auto gy = tape.grad(c);
    const auto& gv = tape.value(gain);
    if (tape.needs_grad(gain)) {
      auto gg = tape.grad(gain);
      for (std::size_t i = 0; i < gy.size(); ++i) gg[i % width] += gy[i] * (*xhat)[i];
    }
    if (tape.needs_grad(bias)) {
      auto gb = tape.grad(bias);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i % width] += gy[i];
    }
    if (tape.needs_grad(x)) {
      auto gx = tape.grad(x);
      const double inv_width = 1.0 / static_cast<double>(width);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * width;
        double mean_d = 0.0, mean_dh = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
          const double d = gy[base + j] * gv[j];
          mean_d += d;
          mean_dh += d * (*xhat)[base + j];
        }
        mean_d *= inv_width;
        mean_dh *= inv_width;
        for (std::size_t j = 0; j < width; ++j) {
          const double d = gy[base + j] * gv[j];
          gx[base + j] +=
              (*inv_std)[r] * (d - mean_d - (*xhat)[base + j] * mean_dh);
        }
      }
    }
  });
}

// ---- reductions and losses ------------------------------------------------

Var sum(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  double total = 0.0;
  for (const double v : xv.values()) total += v;
  const Var c{t.size()};
  return t.record(Tensor::scalar(total), {x}, [x, c](Tape& tape) {
    const double gc = tape.grad(c)[0];
    for (double& g : tape.grad(x)) g += gc;
  });
}

namespace {
constexpr double kLogFloor = 1e-12;
}

Var cross_entropy_sum(Tape& t, Var probs, const Tensor& one_hot) {
  const Tensor& pv = t.value(probs);
  if (pv.shape() != one_hot.shape() || pv.rank() == 0) {
    shape_error("cross_entropy_sum", pv.shape(), one_hot.shape());
  }
  const std::size_t cols = last_dim(pv.shape());
  const std::size_t rows = leading_rows(pv.shape());
  std::vector<std::size_t> target(rows);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double y = one_hot[r * cols + j];
      if (y == 1.0) {
        ++ones;
        target[r] = j;
      } else if (y != 0.0) {
        ones = 2;
      }
    }
    if (ones != 1) {
      throw std::invalid_argument("label row " + std::to_string(r) +
                                  " is not one-hot");
    }
    loss -= std::log(std::max(pv[r * cols + target[r]], kLogFloor));
  }
  const Var c{t.size()};
  return t.record(Tensor::scalar(loss), {probs},
                  [probs, c, cols, target = std::move(target)](Tape& tape) {
    const double gc = tape.grad(c)[0];
    const auto& pv = tape.value(probs);
    auto gp = tape.grad(probs);
    for (std::size_t r = 0; r < target.size(); ++r) {
      const std::size_t idx = r * cols + target[r];
      if (pv[idx] > kLogFloor) gp[idx] -= gc / pv[idx];
    }
  });
}

Var mean_abs_error(Tape& t, Var pred, const Tensor& target) {
  const Tensor& pv = t.value(pred);
  if (pv.size() != target.size()) {
    shape_error("mean_abs_error", pv.shape(), target.shape());
  }
  if (pv.size() == 0) throw std::invalid_argument("mean_abs_error: empty batch");
  const double n = static_cast<double>(pv.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) loss += std::abs(target[i] - pv[i]);
  loss /= n;
  const Var c{t.size()};
  return t.record(Tensor::scalar(loss), {pred}, [pred, c, n, target](Tape& tape) {
    const double gc = tape.grad(c)[0];
    const auto& pv = tape.value(pred);
    auto gp = tape.grad(pred);
    for (std::size_t i = 0; i < gp.size(); ++i) {
      const double r = pv[i] - target[i];
      if (r > 0.0) gp[i] += gc / n;
      else if (r < 0.0) gp[i] -= gc / n;
    }
  });
}

// ---- gradient checking ----------------------------------------------------

GradCheckResult gradient_check(const std::function<Var(Tape&)>& build,
                               std::span<Tensor* const> params, double step) {
  auto evaluate = [&build]() {
    Tape tape;
    const Var loss = build(tape);
    const double v = tape.value(loss)[0];
    if (!std::isfinite(v)) {
      throw std::runtime_error("gradient_check: function value is not finite");
    }
    return v;
  };

  for (Tensor* p : params) p->zero_grad();
  {
    Tape tape;
    const Var loss = build(tape);
    if (!std::isfinite(tape.value(loss)[0])) {
      throw std::runtime_error("gradient_check: function value is not finite");
    }
    tape.backward(loss);
  }

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double original = p[i];
      p[i] = original + step;
      const double up = evaluate();
      p[i] = original - step;
      const double down = evaluate();
      p[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > result.max_rel_error || (pi == 0 && i == 0)) {
        result = {err, pi, i, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace gelae::ad
