#include "retain/lstm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <Eigen/Core>
#include <string>

#include "retain/errors.hpp"

namespace retain {

std::size_t lstm_hidden_size(const LstmParameters& params) {
  return params.recurrent_weights.rank() == 2 ? params.recurrent_weights.shape()[1] : 0;
}

std::size_t lstm_input_size(const LstmParameters& params) {
  return params.input_weights.rank() == 2 ? params.input_weights.shape()[1] : 0;
}

void validate_lstm(const LstmParameters& params) {
  const std::size_t h = lstm_hidden_size(params);
  const std::size_t d = lstm_input_size(params);
  if (h == 0 || d == 0 || params.input_weights.shape() != Shape{4 * h, d} ||
      params.recurrent_weights.shape() != Shape{4 * h, h} || params.bias.shape() != Shape{4 * h}) {
    throw ShapeError("inconsistent LSTM weights: W " + params.input_weights.shape_string() +
                     ", U " + params.recurrent_weights.shape_string() + ", b " +
                     params.bias.shape_string());
  }
}

namespace {

Tensor uniform(Shape shape, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

LstmParameters init_lstm(std::size_t input_size, std::size_t hidden_size, std::mt19937_64& rng) {
  if (input_size == 0 || hidden_size == 0) throw ContractError("LSTM sizes must be positive");
  LstmParameters p;
  p.input_weights = uniform({4 * hidden_size, input_size}, 1.0 / std::sqrt(input_size), rng);
  p.recurrent_weights =
      uniform({4 * hidden_size, hidden_size}, 1.0 / std::sqrt(hidden_size), rng);
  p.bias = Tensor(Shape{4 * hidden_size});
  for (std::size_t i = hidden_size; i < 2 * hidden_size; ++i) p.bias[i] = 1.0;
  return p;
}

LstmLayer<Var> bind(Tape& tape, const LstmParameters& params) {
  return {tape.leaf(params.input_weights), tape.leaf(params.recurrent_weights),
          tape.leaf(params.bias)};
}

LstmParameters gradients(const Tape& tape, const LstmLayer<Var>& bound) {
  return {tape.grad(bound.input_weights), tape.grad(bound.recurrent_weights),
          tape.grad(bound.bias)};
}

LstmVarState lstm_zero_state(Tape& tape, std::size_t batch, std::size_t hidden) {
  return {tape.constant(Tensor(Shape{batch, hidden})), tape.constant(Tensor(Shape{batch, hidden}))};
}

LstmVarState lstm_step(const LstmLayer<Var>& params, const LstmVarState& state, Var x) {
  const std::size_t h = params.recurrent_weights.shape()[1];
  Var gates = add_row(add(matmul_nt(x, params.input_weights),
                          matmul_nt(state.hidden, params.recurrent_weights)),
                      params.bias);
  Var i = sigmoid(slice_cols(gates, 0, h));
  Var f = sigmoid(slice_cols(gates, h, 2 * h));
  Var g = tanh(slice_cols(gates, 2 * h, 3 * h));
  Var o = sigmoid(slice_cols(gates, 3 * h, 4 * h));
  Var c = add(mul(f, state.cell), mul(i, g));
  return {mul(o, tanh(c)), c};
}

namespace {

using Eigen::ArrayXd;
using Eigen::ArrayXXd;

// In place on `rows` gate rows of width 4h: sigmoid on (i, f, o), tanh on g.
// Both come from e = exp(-|z|) (exp(-2|z|) for tanh), which stays in (0, 1].
void activate_gates(double* a, std::size_t rows, std::size_t h, const ArrayXd& scale,
                    ArrayXXd& e) {
  const Eigen::Map<ArrayXXd> z(a, Eigen::Index(4 * h), Eigen::Index(rows));
  e = (-(z.abs().colwise() * scale)).exp();
  const auto sigmoid = [](double* out, const double* x, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) out[k] = (out[k] >= 0.0 ? 1.0 : x[k]) / (1.0 + x[k]);
  };
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = a + r * 4 * h;
    const double* er = e.data() + r * 4 * h;
    sigmoid(row, er, 2 * h);
    for (std::size_t k = 2 * h; k < 3 * h; ++k) {
      row[k] = std::copysign((1.0 - er[k]) / (1.0 + er[k]), row[k]);
    }
    sigmoid(row + 3 * h, er + 3 * h, h);
  }
}

void tanh_into(const double* in, double* out, std::size_t n, ArrayXd& e) {
  e = (-2.0 * Eigen::Map<const ArrayXd>(in, Eigen::Index(n)).abs()).exp();
  for (std::size_t k = 0; k < n; ++k) out[k] = std::copysign((1.0 - e[k]) / (1.0 + e[k]), in[k]);
}

}  // namespace

Var lstm_layer(const LstmLayer<Var>& params, Var x, std::size_t batch) {
  const Tensor& xs = x.value();
  const Tensor& w = params.input_weights.value();
  const Tensor& u = params.recurrent_weights.value();
  const Tensor& bias = params.bias.value();
  const std::size_t h = u.rank() == 2 ? u.cols() : 0;
  if (xs.rank() != 2 || batch == 0 || xs.rows() == 0 || xs.rows() % batch != 0 || h == 0 ||
      w.shape() != Shape{4 * h, xs.cols()} || u.shape() != Shape{4 * h, h} ||
      bias.shape() != Shape{4 * h}) {
    throw ShapeError("lstm_layer: input " + xs.shape_string() + " in batches of " +
                     std::to_string(batch) + " for W " + w.shape_string() + ", U " +
                     u.shape_string() + ", b " + bias.shape_string());
  }
  const std::size_t rows = xs.rows(), steps = rows / batch, g4 = 4 * h;

  // Activated gates (i, f, g, o), cell states and their tanh for every row.
  auto act = std::make_shared<Tensor>(Shape{rows, g4});
  auto cell = std::make_shared<Tensor>(Shape{rows, h});
  auto tcell = std::make_shared<Tensor>(Shape{rows, h});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(bias.raw(), g4, act->raw() + r * g4);
  kernels::gemm_acc(xs, kernels::transpose(w), *act);
  const Tensor ut = kernels::transpose(u);
  ArrayXd scale = ArrayXd::Ones(Eigen::Index(g4));
  scale.segment(Eigen::Index(2 * h), Eigen::Index(h)).setConstant(2.0);
  ArrayXXd scratch;
  ArrayXd scratch_c;
  Tensor hidden(Shape{rows, h});
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t r0 = t * batch;
    if (t > 0) {
      kernels::gemm_acc({hidden.raw() + (r0 - batch) * h, ut.raw(), act->raw() + r0 * g4, batch,
                         h, g4, h, g4, g4});
    }
    activate_gates(act->raw() + r0 * g4, batch, h, scale, scratch);
    for (std::size_t r = r0; r < r0 + batch; ++r) {
      const double* a = act->raw() + r * g4;
      double* c = cell->raw() + r * h;
      if (t > 0) {
        const double* prev = c - batch * h;
        for (std::size_t j = 0; j < h; ++j) c[j] = a[h + j] * prev[j] + a[j] * a[2 * h + j];
      } else {
        for (std::size_t j = 0; j < h; ++j) c[j] = a[j] * a[2 * h + j];
      }
    }
    tanh_into(cell->raw() + r0 * h, tcell->raw() + r0 * h, batch * h, scratch_c);
    for (std::size_t r = r0; r < r0 + batch; ++r) {
      const double* o = act->raw() + r * g4 + 3 * h;
      const double* tc = tcell->raw() + r * h;
      double* out = hidden.raw() + r * h;
      for (std::size_t j = 0; j < h; ++j) out[j] = o[j] * tc[j];
    }
  }
  if (!cell->all_finite()) throw NumericError("non-finite LSTM cell state");

  Tape& tape = *x.tape;
  const std::size_t self = tape.size();
  return tape.record(
      std::move(hidden), {x, params.input_weights, params.recurrent_weights, params.bias},
      [x, params, batch, steps, h, g4, rows, self, act, cell, tcell](Tape& t,
                                                                 const Tensor& dh) {
        const Tensor& hs = t.value(Var{&t, self});
        Tensor da(Shape{rows, g4});
        Tensor dh_next(Shape{batch, h});
        Tensor dc_next(Shape{batch, h});
        const Tensor& u = params.recurrent_weights.value();
        for (std::size_t s = steps; s-- > 0;) {
          const std::size_t r0 = s * batch;
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t r = r0 + b;
            const double* a = act->raw() + r * g4;
            const double* tc = tcell->raw() + r * h;
            const double* prev = s > 0 ? cell->raw() + (r - batch) * h : nullptr;
            const double* dhr = dh.raw() + r * h;
            double* dhn = dh_next.raw() + b * h;
            double* dcn = dc_next.raw() + b * h;
            double* d = da.raw() + r * g4;
            for (std::size_t j = 0; j < h; ++j) {
              const double i = a[j], f = a[h + j], g = a[2 * h + j], o = a[3 * h + j];
              const double dhj = dhr[j] + dhn[j];
              const double dc = dhj * o * (1.0 - tc[j] * tc[j]) + dcn[j];
              d[j] = dc * g * i * (1.0 - i);
              d[h + j] = prev ? dc * prev[j] * f * (1.0 - f) : 0.0;
              d[2 * h + j] = dc * i * (1.0 - g * g);
              d[3 * h + j] = dhj * tc[j] * o * (1.0 - o);
              dcn[j] = dc * f;
            }
          }
          if (s > 0) {
            std::fill(dh_next.data().begin(), dh_next.data().end(), 0.0);
            kernels::gemm_acc({da.raw() + r0 * g4, u.raw(), dh_next.raw(), batch, g4, h, g4, h, h});
          }
        }
        if (t.requires_grad(x)) {
          kernels::gemm_acc(da, params.input_weights.value(), t.grad_buffer(x));
        }
        const Tensor dat = kernels::transpose(da);
        if (t.requires_grad(params.input_weights)) {
          kernels::gemm_acc(dat, x.value(), t.grad_buffer(params.input_weights));
        }
        if (t.requires_grad(params.recurrent_weights) && steps > 1) {
          kernels::gemm_acc({dat.raw() + batch, hs.raw(),
                             t.grad_buffer(params.recurrent_weights).raw(), g4, rows - batch, h,
                             rows, h, h});
        }
        if (t.requires_grad(params.bias)) {
          Tensor& gb = t.grad_buffer(params.bias);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* d = da.raw() + r * g4;
            for (std::size_t k = 0; k < g4; ++k) gb[k] += d[k];
          }
        }
      });
}

std::vector<Var> lstm_sequence(std::span<const LstmLayer<Var>> layers,
                               std::span<const Var> steps) {
  if (steps.empty()) throw ShapeError("lstm_sequence needs at least one time step");
  if (layers.empty()) throw ShapeError("lstm_sequence needs at least one layer");
  Tape& tape = *steps.front().tape;
  const std::size_t batch = steps.front().value().rows();
  std::vector<Var> inputs(steps.begin(), steps.end());
  for (const LstmLayer<Var>& layer : layers) {
    LstmVarState state = lstm_zero_state(tape, batch, layer.recurrent_weights.shape()[1]);
    std::vector<Var> outputs;
    outputs.reserve(inputs.size());
    for (Var x : inputs) {
      state = lstm_step(layer, state, x);
      outputs.push_back(state.hidden);
    }
    inputs = std::move(outputs);
  }
  return inputs;
}

LstmState lstm_step(const LstmParameters& params, const LstmState& state, const Tensor& x) {
  validate_lstm(params);
  const std::size_t h = lstm_hidden_size(params);
  if (x.size() != lstm_input_size(params) || state.hidden.size() != h || state.cell.size() != h) {
    throw ShapeError("lstm_step: input " + x.shape_string() + " / state " +
                     state.hidden.shape_string() + " for a layer with d=" +
                     std::to_string(lstm_input_size(params)) + ", h=" + std::to_string(h));
  }
  Tape tape(false);
  const LstmLayer<Var> bound = bind(tape, params);
  const LstmVarState s{tape.constant(Tensor::matrix(1, h, {state.hidden.data().begin(),
                                                           state.hidden.data().end()})),
                       tape.constant(Tensor::matrix(1, h, {state.cell.data().begin(),
                                                           state.cell.data().end()}))};
  const Var input = tape.constant(Tensor::matrix(1, x.size(), {x.data().begin(), x.data().end()}));
  const LstmVarState next = lstm_step(bound, s, input);
  const auto& hv = next.hidden.value().data();
  const auto& cv = next.cell.value().data();
  return {Tensor::vector({hv.begin(), hv.end()}), Tensor::vector({cv.begin(), cv.end()})};
}

Tensor lstm_sequence(std::span<const LstmParameters> layers, const Tensor& xs) {
  if (xs.rank() != 2 || xs.rows() == 0) {
    throw ShapeError("lstm_sequence needs a non-empty T x d input, got " + xs.shape_string());
  }
  if (layers.empty()) throw ShapeError("lstm_sequence needs at least one layer");
  for (const auto& layer : layers) validate_lstm(layer);
  if (lstm_input_size(layers.front()) != xs.cols()) {
    throw ShapeError("lstm_sequence: input width " + std::to_string(xs.cols()) +
                     " for a layer with d=" + std::to_string(lstm_input_size(layers.front())));
  }
  Tape tape(false);
  std::vector<LstmLayer<Var>> bound;
  for (const auto& layer : layers) bound.push_back(bind(tape, layer));
  std::vector<Var> steps;
  for (std::size_t t = 0; t < xs.rows(); ++t) {
    const auto row = xs.row(t);
    steps.push_back(tape.constant(Tensor::matrix(1, xs.cols(), {row.begin(), row.end()})));
  }
  const std::vector<Var> hs = lstm_sequence(bound, steps);
  const std::size_t h = lstm_hidden_size(layers.back());
  Tensor out(Shape{xs.rows(), h});
  for (std::size_t t = 0; t < hs.size(); ++t) {
    const auto v = hs[t].value().data();
    std::copy(v.begin(), v.end(), out.row(t).begin());
  }
  return out;
}

}  // namespace retain
