#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "retain/autodiff.hpp"
#include "retain/lstm.hpp"
#include "retain/tensor.hpp"

namespace retain {

/// Sizes shared by the data pipeline and the models. Defaults: glucose,
/// insulin and CHO inputs over 3 hours of 5-minute steps, predicting 30
/// minutes ahead, with 64-wide embeddings and 128-unit recurrent layers.
struct ModelDimensions {
  std::size_t inputs = 3;      // r
  std::size_t history = 36;    // H
  std::size_t horizon = 6;     // PH
  std::size_t embedding = 64;  // m
  std::size_t hidden = 128;    // p

  void validate() const;
  bool operator==(const ModelDimensions&) const = default;
};

/// RETAIN weights. T is Tensor for stored parameters, Var once bound.
template <class T>
struct RetainWeights {
  T embedding;               // m x r, no bias
  LstmLayer<T> alpha_rnn;    // d = m, h = p
  T alpha_weight;            // 1 x p
  T alpha_bias;              // scalar
  LstmLayer<T> beta_rnn;     // d = m, h = p
  T beta_weight;             // m x p
  T beta_bias;               // m
  T output_weight;           // 1 x m
  T output_bias;             // scalar
};

using RetainParameters = RetainWeights<Tensor>;

template <class T>
struct is_retain_weights : std::false_type {};
template <class T>
struct is_retain_weights<RetainWeights<T>> : std::true_type {};

/// Calls f on corresponding tensors of one or more weight sets in
/// declaration order; this order is also the weight file payload order.
template <class F, class... W>
  requires(sizeof...(W) > 0 && (is_retain_weights<std::remove_cvref_t<W>>::value && ...))
void for_each_tensor(F&& f, W&&... w) {
  f(w.embedding...);
  for_each_tensor(f, w.alpha_rnn...);
  f(w.alpha_weight...);
  f(w.alpha_bias...);
  for_each_tensor(f, w.beta_rnn...);
  f(w.beta_weight...);
  f(w.beta_bias...);
  f(w.output_weight...);
  f(w.output_bias...);
}

/// Baseline: per-step linear embedding, stacked LSTM, linear head on the
/// last hidden state.
template <class T>
struct BaselineWeights {
  T embedding;                      // m x r, no bias
  std::vector<LstmLayer<T>> layers;
  T output_weight;                  // 1 x p
  T output_bias;                    // scalar
};

using BaselineParameters = BaselineWeights<Tensor>;

template <class T>
struct is_baseline_weights : std::false_type {};
template <class T>
struct is_baseline_weights<BaselineWeights<T>> : std::true_type {};

/// All weight sets must have the same layer count.
template <class F, class W0, class... W>
  requires(is_baseline_weights<std::remove_cvref_t<W0>>::value &&
           (is_baseline_weights<std::remove_cvref_t<W>>::value && ...))
void for_each_tensor(F&& f, W0&& w0, W&&... w) {
  f(w0.embedding, w.embedding...);
  for (std::size_t l = 0; l < w0.layers.size(); ++l) for_each_tensor(f, w0.layers[l], w.layers[l]...);
  f(w0.output_weight, w.output_weight...);
  f(w0.output_bias, w.output_bias...);
}

/// Everything retain_forward computes for one input window.
struct ForwardTrace {
  Tensor embeddings;  // H x m
  Tensor alphas;      // H
  Tensor betas;       // H x m
  Tensor context;     // m
  double prediction = 0.0;
};

/// Batched RETAIN forward pass on a tape. `alphas` is B x H; `betas` and
/// `embeddings` are (H*B) x m in time-major order (row i*B + b).
struct RetainBatch {
  Var prediction;  // B x 1
  Var alphas;
  Var betas;
  Var embeddings;
  Var context;     // B x m
};

RetainParameters init_retain(const ModelDimensions& dims, std::uint64_t seed);
/// Throws ShapeError unless the weights match `dims`.
void validate(const RetainParameters& params, const ModelDimensions& dims);
RetainWeights<Var> bind(Tape& tape, const RetainParameters& params);
RetainParameters gradients(const Tape& tape, const RetainWeights<Var>& bound);

/// `steps` is a stack_steps() batch of `batch` windows.
RetainBatch retain_forward(const RetainWeights<Var>& w, Var steps, std::size_t batch);

/// Single-window forward pass; x is H x r (standardized inputs).
ForwardTrace retain_forward(const RetainParameters& params, const Tensor& x);
/// One trace per window, computed as a single batch.
std::vector<ForwardTrace> retain_forward(const RetainParameters& params,
                                         std::span<const Tensor* const> windows);

BaselineParameters init_baseline(const ModelDimensions& dims, std::size_t layers,
                                 std::uint64_t seed);
void validate(const BaselineParameters& params, const ModelDimensions& dims);
BaselineWeights<Var> bind(Tape& tape, const BaselineParameters& params);
BaselineParameters gradients(const Tape& tape, const BaselineWeights<Var>& bound);
/// Returns B x 1 predictions.
Var baseline_forward(const BaselineWeights<Var>& w, Var steps, std::size_t batch);
double baseline_forward(const BaselineParameters& params, const Tensor& x);

enum class ModelKind : std::uint32_t { retain = 0, lstm = 1 };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct RetainModel {
  ModelDimensions dims;
  RetainParameters params;
};

struct BaselineModel {
  ModelDimensions dims;
  BaselineParameters params;
};

using Model = std::variant<RetainModel, BaselineModel>;

/// Default layer count of the baseline regressor.
inline constexpr std::size_t kBaselineLayers = 2;

Model make_model(ModelKind kind, const ModelDimensions& dims, std::uint64_t seed);
ModelKind kind_of(const Model& model);
const ModelDimensions& dimensions(const Model& model);
/// Single-window prediction.
double predict(const Model& model, const Tensor& x);

/// Stacks B windows (each H x r) into one (H*B) x r constant on `tape`,
/// time-major: row i*B + b is step i of windows[b].
Var stack_steps(Tape& tape, std::span<const Tensor* const> windows);

// Weight files: "RTNW", format version, model kind, dimension header
// (r, H, PH, m, p), layer count, tensor count, then every tensor as
// rank + dims + little-endian doubles, in declaration order.

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(std::span<const std::uint8_t> bytes);

}  // namespace retain
