#include "retain/model.hpp"

#include <cmath>
#include <random>

#include "retain/errors.hpp"

namespace retain {

void ModelDimensions::validate() const {
  if (inputs == 0 || history == 0 || horizon == 0 || embedding == 0 || hidden == 0) {
    throw ContractError("model dimensions must all be strictly positive");
  }
}

namespace {

Tensor uniform(Shape shape, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

void expect_shape(const Tensor& t, const Shape& shape, const char* name) {
  if (t.shape() != shape) {
    throw ShapeError(std::string(name) + " has shape " + t.shape_string() + ", expected " +
                     to_string(shape));
  }
}

void expect_lstm(const LstmParameters& p, std::size_t d, std::size_t h, const char* name) {
  validate_lstm(p);
  if (lstm_input_size(p) != d || lstm_hidden_size(p) != h) {
    throw ShapeError(std::string(name) + " is a (" + std::to_string(lstm_input_size(p)) + " -> " +
                     std::to_string(lstm_hidden_size(p)) + ") layer, expected (" +
                     std::to_string(d) + " -> " + std::to_string(h) + ")");
  }
}

Tensor row_vector(const Tensor& t, std::size_t r) {
  const auto v = t.row(r);
  return Tensor::vector({v.begin(), v.end()});
}

}  // namespace

RetainParameters init_retain(const ModelDimensions& dims, std::uint64_t seed) {
  dims.validate();
  std::mt19937_64 rng(seed);
  const std::size_t r = dims.inputs, m = dims.embedding, p = dims.hidden;
  RetainParameters w;
  w.embedding = uniform({m, r}, 1.0 / std::sqrt(double(r)), rng);
  w.alpha_rnn = init_lstm(m, p, rng);
  w.alpha_weight = uniform({1, p}, 1.0 / std::sqrt(double(p)), rng);
  w.alpha_bias = Tensor::scalar(0.0);
  w.beta_rnn = init_lstm(m, p, rng);
  w.beta_weight = uniform({m, p}, 1.0 / std::sqrt(double(p)), rng);
  w.beta_bias = Tensor(Shape{m});
  w.output_weight = uniform({1, m}, 1.0 / std::sqrt(double(m)), rng);
  w.output_bias = Tensor::scalar(0.0);
  return w;
}

void validate(const RetainParameters& w, const ModelDimensions& dims) {
  dims.validate();
  const std::size_t r = dims.inputs, m = dims.embedding, p = dims.hidden;
  expect_shape(w.embedding, {m, r}, "embedding");
  expect_lstm(w.alpha_rnn, m, p, "alpha_rnn");
  expect_shape(w.alpha_weight, {1, p}, "alpha_weight");
  expect_shape(w.alpha_bias, {}, "alpha_bias");
  expect_lstm(w.beta_rnn, m, p, "beta_rnn");
  expect_shape(w.beta_weight, {m, p}, "beta_weight");
  expect_shape(w.beta_bias, {m}, "beta_bias");
  expect_shape(w.output_weight, {1, m}, "output_weight");
  expect_shape(w.output_bias, {}, "output_bias");
}

RetainWeights<Var> bind(Tape& tape, const RetainParameters& params) {
  RetainWeights<Var> out;
  for_each_tensor([&tape](const Tensor& t, Var& v) { v = tape.leaf(t); }, params, out);
  return out;
}

RetainParameters gradients(const Tape& tape, const RetainWeights<Var>& bound) {
  RetainParameters out;
  for_each_tensor([&tape](const Var& v, Tensor& t) { t = tape.grad(v); }, bound, out);
  return out;
}

RetainBatch retain_forward(const RetainWeights<Var>& w, Var steps, std::size_t batch) {
  RetainBatch out;
  out.embeddings = matmul_nt(steps, w.embedding);
  const Var g = lstm_layer(w.alpha_rnn, out.embeddings, batch);
  out.alphas = softmax(unstack_column(add_row(matmul_nt(g, w.alpha_weight), w.alpha_bias), batch));
  const Var h = lstm_layer(w.beta_rnn, out.embeddings, batch);
  out.betas = tanh(add_row(matmul_nt(h, w.beta_weight), w.beta_bias));
  out.context = weighted_step_sum(out.alphas, mul(out.betas, out.embeddings));
  out.prediction = add_row(matmul_nt(out.context, w.output_weight), w.output_bias);
  return out;
}

Var stack_steps(Tape& tape, std::span<const Tensor* const> windows) {
  if (windows.empty()) throw ShapeError("empty batch");
  const std::size_t steps = windows.front()->rows(), width = windows.front()->cols();
  for (const Tensor* w : windows) {
    if (w->rank() != 2 || w->rows() != steps || w->cols() != width) {
      throw ShapeError("batch window of shape " + w->shape_string() + ", expected [" +
                       std::to_string(steps) + "x" + std::to_string(width) + "]");
    }
  }
  const std::size_t batch = windows.size();
  Tensor x(Shape{steps * batch, width});
  for (std::size_t i = 0; i < steps; ++i) {
    for (std::size_t b = 0; b < batch; ++b) {
      const auto row = windows[b]->row(i);
      std::copy(row.begin(), row.end(), x.row(i * batch + b).begin());
    }
  }
  return tape.constant(std::move(x));
}

std::vector<ForwardTrace> retain_forward(const RetainParameters& params,
                                         std::span<const Tensor* const> windows) {
  for (const Tensor* x : windows) {
    if (x->rank() != 2 || x->rows() == 0 || x->cols() != params.embedding.cols()) {
      throw ShapeError("retain_forward: input " + x->shape_string() + " for an embedding of " +
                       params.embedding.shape_string());
    }
  }
  Tape tape(false);
  const RetainWeights<Var> w = bind(tape, params);
  const RetainBatch b = retain_forward(w, stack_steps(tape, windows), windows.size());

  const std::size_t h = windows.front()->rows(), m = params.embedding.rows();
  std::vector<ForwardTrace> traces(windows.size());
  for (std::size_t k = 0; k < windows.size(); ++k) {
    ForwardTrace& trace = traces[k];
    trace.embeddings = Tensor(Shape{h, m});
    trace.betas = Tensor(Shape{h, m});
    for (std::size_t i = 0; i < h; ++i) {
      const auto v = b.embeddings.value().row(i * windows.size() + k);
      const auto beta = b.betas.value().row(i * windows.size() + k);
      std::copy(v.begin(), v.end(), trace.embeddings.row(i).begin());
      std::copy(beta.begin(), beta.end(), trace.betas.row(i).begin());
    }
    trace.alphas = row_vector(b.alphas.value(), k);
    trace.context = row_vector(b.context.value(), k);
    trace.prediction = b.prediction.value()[k];
  }
  return traces;
}

ForwardTrace retain_forward(const RetainParameters& params, const Tensor& x) {
  const Tensor* window = &x;
  return std::move(retain_forward(params, std::span(&window, 1)).front());
}

BaselineParameters init_baseline(const ModelDimensions& dims, std::size_t layers,
                                 std::uint64_t seed) {
  dims.validate();
  if (layers == 0) throw ContractError("baseline needs at least one LSTM layer");
  std::mt19937_64 rng(seed);
  BaselineParameters w;
  w.embedding = uniform({dims.embedding, dims.inputs}, 1.0 / std::sqrt(double(dims.inputs)), rng);
  for (std::size_t l = 0; l < layers; ++l) {
    w.layers.push_back(init_lstm(l == 0 ? dims.embedding : dims.hidden, dims.hidden, rng));
  }
  w.output_weight = uniform({1, dims.hidden}, 1.0 / std::sqrt(double(dims.hidden)), rng);
  w.output_bias = Tensor::scalar(0.0);
  return w;
}

void validate(const BaselineParameters& w, const ModelDimensions& dims) {
  dims.validate();
  expect_shape(w.embedding, {dims.embedding, dims.inputs}, "embedding");
  if (w.layers.empty()) throw ShapeError("baseline has no LSTM layers");
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    expect_lstm(w.layers[l], l == 0 ? dims.embedding : dims.hidden, dims.hidden, "lstm layer");
  }
  expect_shape(w.output_weight, {1, dims.hidden}, "output_weight");
  expect_shape(w.output_bias, {}, "output_bias");
}

BaselineWeights<Var> bind(Tape& tape, const BaselineParameters& params) {
  BaselineWeights<Var> out;
  out.layers.resize(params.layers.size());
  for_each_tensor([&tape](const Tensor& t, Var& v) { v = tape.leaf(t); }, params, out);
  return out;
}

BaselineParameters gradients(const Tape& tape, const BaselineWeights<Var>& bound) {
  BaselineParameters out;
  out.layers.resize(bound.layers.size());
  for_each_tensor([&tape](const Var& v, Tensor& t) { t = tape.grad(v); }, bound, out);
  return out;
}

Var baseline_forward(const BaselineWeights<Var>& w, Var steps, std::size_t batch) {
  Var h = matmul_nt(steps, w.embedding);
  for (const LstmLayer<Var>& layer : w.layers) h = lstm_layer(layer, h, batch);
  const std::size_t rows = h.value().rows();
  return add_row(matmul_nt(slice_rows(h, rows - batch, rows), w.output_weight), w.output_bias);
}

double baseline_forward(const BaselineParameters& params, const Tensor& x) {
  if (x.rank() != 2 || x.rows() == 0 || x.cols() != params.embedding.cols()) {
    throw ShapeError("baseline_forward: input " + x.shape_string() + " for an embedding of " +
                     params.embedding.shape_string());
  }
  Tape tape(false);
  const BaselineWeights<Var> w = bind(tape, params);
  const Tensor* window = &x;
  return baseline_forward(w, stack_steps(tape, std::span(&window, 1)), 1).value().item();
}

std::string to_string(ModelKind kind) { return kind == ModelKind::retain ? "retain" : "lstm"; }

ModelKind parse_model_kind(const std::string& name) {
  if (name == "retain") return ModelKind::retain;
  if (name == "lstm") return ModelKind::lstm;
  throw ContractError("unknown model '" + name + "' (expected retain or lstm)");
}

Model make_model(ModelKind kind, const ModelDimensions& dims, std::uint64_t seed) {
  if (kind == ModelKind::retain) return RetainModel{dims, init_retain(dims, seed)};
  return BaselineModel{dims, init_baseline(dims, kBaselineLayers, seed)};
}

ModelKind kind_of(const Model& model) {
  return std::holds_alternative<RetainModel>(model) ? ModelKind::retain : ModelKind::lstm;
}

const ModelDimensions& dimensions(const Model& model) {
  return std::visit([](const auto& m) -> const ModelDimensions& { return m.dims; }, model);
}

double predict(const Model& model, const Tensor& x) {
  if (const auto* r = std::get_if<RetainModel>(&model)) return retain_forward(r->params, x).prediction;
  return baseline_forward(std::get<BaselineModel>(model).params, x);
}

}  // namespace retain
