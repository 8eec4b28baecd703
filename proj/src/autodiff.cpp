#include "retain/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "retain/errors.hpp"

namespace retain {

const Tensor& Var::value() const { return tape->value(*this); }

void Tape::check_owner(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) {
    throw ContractError("variable does not belong to this tape");
  }
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite leaf value");
  nodes_.push_back(Node{std::move(value), Tensor{}, true, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant value");
  nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by op (node " + std::to_string(nodes_.size()) +
                       ")");
  }
  bool needs = false;
  for (Var in : inputs) {
    check_owner(in);
    needs = needs || nodes_[in.id].requires_grad;
  }
  Node node{std::move(value), Tensor{}, needs, nullptr};
  if (needs && record_) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  check_owner(v);
  return nodes_[v.id].value;
}

Tensor Tape::grad(Var v) const {
  check_owner(v);
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

bool Tape::requires_grad(Var v) const {
  check_owner(v);
  return nodes_[v.id].requires_grad;
}

Tensor& Tape::grad_buffer(Var v) {
  check_owner(v);
  Node& n = nodes_[v.id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  check_owner(v);
  if (!nodes_[v.id].requires_grad) return;
  Tensor& buf = grad_buffer(v);
  if (buf.size() != g.size()) {
    throw ShapeError("gradient of shape " + g.shape_string() + " for value " +
                     buf.shape_string());
  }
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var output) {
  check_owner(output);
  if (!record_) throw ContractError("backward() on a non-recording tape");
  if (nodes_[output.id].value.size() != 1) {
    throw ContractError("backward() needs a scalar output, got " +
                        nodes_[output.id].value.shape_string());
  }
  for (Node& n : nodes_) n.grad = Tensor{};
  if (!nodes_[output.id].requires_grad) return;
  grad_buffer(output)[0] = 1.0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

namespace {

void same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw ContractError("operands on different tapes");
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  Tensor out = kernels::matmul(a.value(), b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) kernels::gemm_acc(g, kernels::transpose(b.value()), t.grad_buffer(a));
    if (t.requires_grad(b)) t.accumulate(b, kernels::matmul_tn(a.value(), g));
  });
}

Var matmul_nt(Var a, Var b) {
  same_tape(a, b);
  Tensor out = kernels::matmul_nt(a.value(), b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) kernels::gemm_acc(g, b.value(), t.grad_buffer(a));
    if (t.requires_grad(b)) t.accumulate(b, kernels::matmul_tn(g, a.value()));
  });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = map(a.value(), [factor](double v) { return v * factor; });
  return a.tape->record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var add_row(Var x, Var bias) {
  same_tape(x, bias);
  const Tensor& v = x.value();
  const Tensor& b = bias.value();
  if (v.rank() > 2 || b.size() != v.cols()) {
    throw ShapeError("add_row: bias " + b.shape_string() + " for " + v.shape_string());
  }
  const std::size_t rows = v.rows(), cols = v.cols();
  Tensor out = v;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
  return x.tape->record(std::move(out), {x, bias}, [x, bias, rows, cols](Tape& t,
                                                                        const Tensor& g) {
    t.accumulate(x, g);
    if (t.requires_grad(bias)) {
      Tensor& gb = t.grad_buffer(bias);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
    }
  });
}

Var mul_col(Var x, Var s) {
  same_tape(x, s);
  const Tensor& v = x.value();
  const Tensor& w = s.value();
  if (v.rank() > 2 || w.size() != v.rows()) {
    throw ShapeError("mul_col: scale " + w.shape_string() + " for " + v.shape_string());
  }
  const std::size_t rows = v.rows(), cols = v.cols();
  Tensor out(v.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = v[r * cols + c] * w[r];
  return x.tape->record(std::move(out), {x, s}, [x, s, rows, cols](Tape& t, const Tensor& g) {
    const Tensor& v = x.value();
    const Tensor& w = s.value();
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad_buffer(x);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] * w[r];
    }
    if (t.requires_grad(s)) {
      Tensor& gs = t.grad_buffer(s);
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += g[r * cols + c] * v[r * cols + c];
        gs[r] += acc;
      }
    }
  });
}

Var tanh(Var a) {
  Tensor out = map(a.value(), [](double v) { return std::tanh(v); });
  const std::size_t self = a.tape->size();
  return a.tape->record(std::move(out), {a}, [a, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(Var{&t, self});
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var sigmoid(Var a) {
  Tensor out = map(a.value(), sigmoid_scalar);
  const std::size_t self = a.tape->size();
  return a.tape->record(std::move(out), {a}, [a, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(Var{&t, self});
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var softmax(Var a) {
  const Tensor& v = a.value();
  if (v.empty() || v.rank() > 2 || v.rank() == 0) {
    throw ShapeError("softmax: needs a non-empty vector or matrix, got " + v.shape_string());
  }
  const std::size_t rows = v.rows(), cols = v.cols();
  if (cols == 0) throw ShapeError("softmax over an empty axis");
  Tensor out(v.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto in = v.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  const std::size_t self = a.tape->size();
  return a.tape->record(std::move(out), {a}, [a, self, rows, cols](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(Var{&t, self});
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        ga[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
      }
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& v = a.value();
  if (v.rank() != 2 || begin > end || end > v.cols()) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") of " + v.shape_string());
  }
  const std::size_t rows = v.rows(), cols = v.cols(), width = end - begin;
  Tensor out(Shape{rows, width});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(v.raw() + r * cols + begin, width, out.raw() + r * width);
  return a.tape->record(std::move(out), {a}, [a, begin, rows, cols, width](Tape& t,
                                                                           const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < width; ++c) ga[r * cols + begin + c] += g[r * width + c];
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& v = a.value();
  if (v.rank() != 2 || begin > end || end > v.rows()) {
    throw ShapeError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") of " + v.shape_string());
  }
  const std::size_t cols = v.cols();
  Tensor out(Shape{end - begin, cols});
  std::copy(v.raw() + begin * cols, v.raw() + end * cols, out.raw());
  return a.tape->record(std::move(out), {a}, [a, begin, cols](Tape& t, const Tensor& g) {
    double* ga = t.grad_buffer(a).raw() + begin * cols;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var unstack_column(Var a, std::size_t batch) {
  const Tensor& v = a.value();
  if (v.rank() != 2 || v.cols() != 1 || batch == 0 || v.rows() % batch != 0) {
    throw ShapeError("unstack_column of " + v.shape_string() + " into batches of " +
                     std::to_string(batch));
  }
  const std::size_t steps = v.rows() / batch;
  Tensor out(Shape{batch, steps});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t b = 0; b < batch; ++b) out.at(b, t) = v[t * batch + b];
  return a.tape->record(std::move(out), {a}, [a, batch, steps](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t s = 0; s < steps; ++s)
      for (std::size_t b = 0; b < batch; ++b) ga[s * batch + b] += g.at(b, s);
  });
}

Var weighted_step_sum(Var weights, Var x) {
  same_tape(weights, x);
  const Tensor& w = weights.value();
  const Tensor& v = x.value();
  if (w.rank() != 2 || v.rank() != 2 || v.rows() != w.rows() * w.cols()) {
    throw ShapeError("weighted_step_sum: weights " + w.shape_string() + ", values " +
                     v.shape_string());
  }
  const std::size_t batch = w.rows(), steps = w.cols(), n = v.cols();
  Tensor out(Shape{batch, n});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t b = 0; b < batch; ++b) {
      const double s = w.at(b, t);
      const double* row = v.raw() + (t * batch + b) * n;
      double* o = out.raw() + b * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += row[j] * s;
    }
  return weights.tape->record(
      std::move(out), {weights, x}, [weights, x, batch, steps, n](Tape& t, const Tensor& g) {
        const Tensor& w = weights.value();
        const Tensor& v = x.value();
        if (t.requires_grad(weights)) {
          Tensor& gw = t.grad_buffer(weights);
          for (std::size_t s = 0; s < steps; ++s)
            for (std::size_t b = 0; b < batch; ++b) {
              const double* row = v.raw() + (s * batch + b) * n;
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[b * n + j] * row[j];
              gw.at(b, s) += acc;
            }
        }
        if (t.requires_grad(x)) {
          Tensor& gx = t.grad_buffer(x);
          for (std::size_t s = 0; s < steps; ++s)
            for (std::size_t b = 0; b < batch; ++b) {
              const double scale = w.at(b, s);
              double* row = gx.raw() + (s * batch + b) * n;
              for (std::size_t j = 0; j < n; ++j) row[j] += g[b * n + j] * scale;
            }
        }
      });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Tape* tape = parts.front().tape;
  const std::size_t rows = parts.front().value().rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (Var p : parts) {
    same_tape(parts.front(), p);
    if (p.value().rank() > 2 || p.value().rows() != rows) {
      throw ShapeError("concat_cols: row count mismatch at " + p.value().shape_string());
    }
    offsets.push_back(total);
    total += p.value().cols();
  }
  Tensor out(Shape{rows, total});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    const std::size_t w = v.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.raw() + r * w, w, out.raw() + r * total + offsets[k]);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape->record(std::move(out), parts, [inputs, offsets, rows, total](Tape& t,
                                                                           const Tensor& g) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!t.requires_grad(inputs[k])) continue;
      Tensor& gk = t.grad_buffer(inputs[k]);
      const std::size_t w = gk.cols();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < w; ++c) gk[r * w + c] += g[r * total + offsets[k] + c];
    }
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.tape->record(Tensor::scalar(total), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

Var mse(Var prediction, Var target) {
  same_tape(prediction, target);
  const Tensor& p = prediction.value();
  const Tensor& y = target.value();
  if (p.size() != y.size() || p.empty()) {
    throw ShapeError("mse: " + p.shape_string() + " vs " + y.shape_string());
  }
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - y[i];
    total += d * d;
  }
  return prediction.tape->record(
      Tensor::scalar(total / n), {prediction, target}, [prediction, target, n](Tape& t,
                                                                              const Tensor& g) {
        const Tensor& p = prediction.value();
        const Tensor& y = target.value();
        const double k = 2.0 * g[0] / n;
        if (t.requires_grad(prediction)) {
          Tensor& gp = t.grad_buffer(prediction);
          for (std::size_t i = 0; i < p.size(); ++i) gp[i] += k * (p[i] - y[i]);
        }
        if (t.requires_grad(target)) {
          Tensor& gy = t.grad_buffer(target);
          for (std::size_t i = 0; i < p.size(); ++i) gy[i] -= k * (p[i] - y[i]);
        }
      });
}

}  // namespace retain
