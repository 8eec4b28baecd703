#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <type_traits>
#include <vector>

#include "retain/autodiff.hpp"
#include "retain/tensor.hpp"

namespace retain {

/// Weights of one LSTM layer. Gates are stacked in the order
/// (input, forget, candidate, output) along the 4h axis.
///
/// T is Tensor for stored parameters and Var once bound to a tape.
template <class T>
struct LstmLayer {
  T input_weights;      // 4h x d
  T recurrent_weights;  // 4h x h
  T bias;               // 4h
};

using LstmParameters = LstmLayer<Tensor>;

template <class T>
struct is_lstm_layer : std::false_type {};
template <class T>
struct is_lstm_layer<LstmLayer<T>> : std::true_type {};

/// Calls f on corresponding tensors of one or more layers, in storage order.
template <class F, class... L>
  requires(sizeof...(L) > 0 && (is_lstm_layer<std::remove_cvref_t<L>>::value && ...))
void for_each_tensor(F&& f, L&&... layers) {
  f(layers.input_weights...);
  f(layers.recurrent_weights...);
  f(layers.bias...);
}

struct LstmState {
  Tensor hidden;  // h
  Tensor cell;    // h
};

/// Hidden and cell state of a batch on a tape, each B x h.
struct LstmVarState {
  Var hidden;
  Var cell;
};

std::size_t lstm_hidden_size(const LstmParameters& params);
std::size_t lstm_input_size(const LstmParameters& params);

/// Throws ShapeError unless the three tensors describe one (d, h) layer.
void validate_lstm(const LstmParameters& params);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights with fan_in = columns of
/// each matrix; zero biases except the forget gate, which starts at 1.
LstmParameters init_lstm(std::size_t input_size, std::size_t hidden_size, std::mt19937_64& rng);

LstmLayer<Var> bind(Tape& tape, const LstmParameters& params);
LstmParameters gradients(const Tape& tape, const LstmLayer<Var>& bound);

/// One batched LSTM update on a tape; x is B x d.
LstmVarState lstm_step(const LstmLayer<Var>& params, const LstmVarState& state, Var x);

/// Zero state for a batch of `batch` sequences on `tape`.
LstmVarState lstm_zero_state(Tape& tape, std::size_t batch, std::size_t hidden);

/// Runs a stack of layers over `steps` (one B x d input per time step) in
/// forward time order from zero states; returns the top layer's hidden
/// state at every step.
std::vector<Var> lstm_sequence(std::span<const LstmLayer<Var>> layers, std::span<const Var> steps);

/// One layer over a time-major stack: row t*B + b of x ((T*B) x d) holds
/// step t of sequence b, and the result ((T*B) x h) holds the hidden states
/// in the same layout. Starts from zero states. Recorded as a single node
/// whose backward pass unrolls through time; agrees with chaining
/// lstm_step up to rounding.
Var lstm_layer(const LstmLayer<Var>& params, Var x, std::size_t batch);

/// Value-level single step for one sequence.
LstmState lstm_step(const LstmParameters& params, const LstmState& state, const Tensor& x);

/// Value-level unrolling: xs is T x d, result is T x h (top layer).
Tensor lstm_sequence(std::span<const LstmParameters> layers, const Tensor& xs);

}  // namespace retain
