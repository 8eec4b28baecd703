#include "retain/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "retain/errors.hpp"
#include "retain/text.hpp"

namespace retain {

namespace {

// Tapes allocate and free many large buffers per batch; keep them on the heap
// instead of mapping fresh pages each time.
void keep_large_blocks() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

template <class F>
void for_each_parameter(F&& f, Model& a, const Model& b) {
  if (a.index() != b.index()) throw ContractError("gradient and model kinds differ");
  if (auto* r = std::get_if<RetainModel>(&a)) {
    for_each_tensor(f, r->params, std::get<RetainModel>(b).params);
  } else {
    for_each_tensor(f, std::get<BaselineModel>(a).params, std::get<BaselineModel>(b).params);
  }
}

template <class F>
void for_each_parameter(F&& f, const Model& a) {
  if (const auto* r = std::get_if<RetainModel>(&a)) {
    for_each_tensor(f, r->params);
  } else {
    for_each_tensor(f, std::get<BaselineModel>(a).params);
  }
}

Var forward(const Model& model, Tape& tape, std::span<const Tensor* const> inputs) {
  const Var steps = stack_steps(tape, inputs);
  if (const auto* r = std::get_if<RetainModel>(&model)) {
    return retain_forward(bind(tape, r->params), steps, inputs.size()).prediction;
  }
  return baseline_forward(bind(tape, std::get<BaselineModel>(model).params), steps,
                          inputs.size());
}

// y' = scale * y + shift applied to the linear output layer.
void rescale_output(Model& model, double scale, double shift) {
  std::visit(
      [&](auto& m) {
        for (double& w : m.params.output_weight.data()) w *= scale;
        m.params.output_bias[0] = m.params.output_bias[0] * scale + shift;
      },
      model);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || batch_size == 0 || max_epochs == 0) {
    throw ContractError("learning rate, batch size and max epochs must be positive");
  }
  if (patience >= max_epochs) throw ContractError("patience must be below max epochs");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0)) {
    throw ContractError("Adam moments must lie in [0, 1) and epsilon be positive");
  }
}

Adam::Adam(const Model& model, const TrainConfig& config) : config_(config) {
  for_each_parameter(
      [this](const Tensor& p) {
        m_.emplace_back(p.shape());
        v_.emplace_back(p.shape());
      },
      model);
}

void Adam::step(Model& model, const Model& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, double(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, double(t_));
  const double lr = config_.learning_rate, b1 = config_.beta1, b2 = config_.beta2;
  std::size_t k = 0;
  for_each_parameter(
      [&](Tensor& p, const Tensor& g) {
        if (k >= m_.size() || m_[k].shape() != p.shape() || g.shape() != p.shape()) {
          throw ShapeError("optimizer state does not match the model");
        }
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = b1 * m[i] + (1.0 - b1) * g[i];
          v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
          p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
        }
        ++k;
      },
      model, grads);
}

double batch_gradient(const Model& model, std::span<const Tensor* const> inputs,
                      std::span<const double> targets, Model& grads) {
  if (inputs.size() != targets.size() || inputs.empty()) {
    throw ShapeError("batch of " + std::to_string(inputs.size()) + " inputs and " +
                     std::to_string(targets.size()) + " targets");
  }
  Tape tape;
  const Var steps = stack_steps(tape, inputs);
  const Var y = tape.constant(Tensor(Shape{targets.size(), 1},
                                     std::vector<double>(targets.begin(), targets.end())));
  if (const auto* r = std::get_if<RetainModel>(&model)) {
    const auto w = bind(tape, r->params);
    const Var loss = mse(retain_forward(w, steps, inputs.size()).prediction, y);
    tape.backward(loss);
    grads = RetainModel{r->dims, gradients(tape, w)};
    return loss.value().item();
  }
  const auto& b = std::get<BaselineModel>(model);
  const auto w = bind(tape, b.params);
  const Var loss = mse(baseline_forward(w, steps, inputs.size()), y);
  tape.backward(loss);
  grads = BaselineModel{b.dims, gradients(tape, w)};
  return loss.value().item();
}

std::vector<double> predict_batched(const Model& model, std::span<const SampleWindow> windows,
                                    std::size_t batch) {
  std::vector<double> out;
  out.reserve(windows.size());
  std::vector<const Tensor*> inputs;
  for (std::size_t begin = 0; begin < windows.size(); begin += batch) {
    const std::size_t end = std::min(windows.size(), begin + batch);
    inputs.clear();
    for (std::size_t k = begin; k < end; ++k) inputs.push_back(&windows[k].x);
    Tape tape(false);
    const Var p = forward(model, tape, inputs);
    for (double v : p.value().data()) out.push_back(v);
  }
  return out;
}

double mean_squared_error(const Model& model, std::span<const SampleWindow> windows) {
  if (windows.empty()) throw ContractError("mean squared error of an empty set");
  const auto pred = predict_batched(model, windows);
  double acc = 0.0;
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const double d = pred[k] - windows[k].y;
    acc += d * d;
  }
  return acc / double(windows.size());
}

TrainResult train(Model model, std::span<const SampleWindow> train_set,
                  std::span<const SampleWindow> valid_set, const TrainConfig& config) {
  config.validate();
  keep_large_blocks();
  if (train_set.empty() || valid_set.empty()) {
    throw ContractError("training needs non-empty training and validation sets");
  }
  const ModelDimensions& dims = dimensions(model);
  for (const auto* set : {&train_set, &valid_set}) {
    for (const SampleWindow& w : *set) {
      if (w.x.rank() != 2 || w.x.rows() != dims.history || w.x.cols() != dims.inputs) {
        throw ShapeError("window " + w.x.shape_string() + " does not match the model");
      }
    }
  }
  const auto start = std::chrono::steady_clock::now();

  double mu = 0.0;
  for (const SampleWindow& w : train_set) mu += w.y;
  mu /= double(train_set.size());
  double var = 0.0;
  for (const SampleWindow& w : train_set) var += (w.y - mu) * (w.y - mu);
  double sigma = std::sqrt(var / double(train_set.size()));
  if (!(sigma > 1e-12 * std::max(1.0, std::abs(mu)))) sigma = 1.0;

  std::vector<double> targets;
  targets.reserve(train_set.size());
  for (const SampleWindow& w : train_set) targets.push_back((w.y - mu) / sigma);

  const auto valid_mse = [&](const Model& m) {
    Model scaled = m;
    rescale_output(scaled, sigma, mu);
    return mean_squared_error(scaled, valid_set);
  };

  TrainResult result{model, {}};
  Adam adam(model, config);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const Tensor*> inputs;
  std::vector<double> batch_targets;
  Model grads = model;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    try {
      for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
        const std::size_t end = std::min(order.size(), begin + config.batch_size);
        inputs.clear();
        batch_targets.clear();
        for (std::size_t k = begin; k < end; ++k) {
          inputs.push_back(&train_set[order[k]].x);
          batch_targets.push_back(targets[order[k]]);
        }
        const double loss = batch_gradient(model, inputs, batch_targets, grads);
        loss_sum += loss * double(end - begin);
        adam.step(model, grads);
      }
    } catch (const NumericError& e) {
      throw NumericError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = loss_sum / double(order.size()) * sigma * sigma;
    rec.valid_mse = valid_mse(model);
    if (!std::isfinite(rec.train_mse) || !std::isfinite(rec.valid_mse)) {
      throw NumericError("training diverged in epoch " + std::to_string(epoch));
    }
    result.report.epochs.push_back(rec);
    result.report.stopped_epoch = epoch;
    if (rec.valid_mse < best) {
      best = rec.valid_mse;
      since_best = 0;
      result.model = model;
      result.report.best_epoch = epoch;
      result.report.best_valid_mse = best;
    } else if (++since_best >= std::max<std::size_t>(config.patience, 1)) {
      break;
    }
  }
  rescale_output(result.model, sigma, mu);
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void write_train_report_csv(std::ostream& out, const TrainReport& report) {
  out << "epoch,train_mse,valid_mse\n";
  for (const EpochRecord& r : report.epochs) {
    out << r.epoch << ',' << format_exact(r.train_mse) << ',' << format_exact(r.valid_mse) << '\n';
  }
}

std::vector<SampleWindow> thin(std::vector<SampleWindow> windows, std::size_t stride) {
  if (stride == 0) throw ContractError("window stride must be positive");
  if (stride == 1) return windows;
  std::vector<SampleWindow> out;
  out.reserve(windows.size() / stride + 1);
  for (std::size_t k = 0; k < windows.size(); k += stride) out.push_back(std::move(windows[k]));
  return out;
}

PreparedSplit prepare_split(std::span<const PatientSeries> train,
                            std::span<const PatientSeries> valid, const ModelDimensions& dims,
                            std::size_t stride) {
  PreparedSplit out;
  auto train_windows = thin(make_windows(train, dims), stride);
  auto valid_windows = thin(make_windows(valid, dims), stride);
  if (train_windows.empty() || valid_windows.empty()) {
    throw ContractError("split yields no training or no validation windows");
  }
  out.standardizer = fit_standardizer(train_windows);
  out.train = apply_standardizer(out.standardizer, std::move(train_windows));
  out.valid = apply_standardizer(out.standardizer, std::move(valid_windows));
  return out;
}

std::vector<HyperParameters> Grid::cells() const {
  std::vector<HyperParameters> out;
  for (std::size_t e : embedding)
    for (std::size_t h : hidden)
      for (double lr : learning_rate)
        for (std::size_t b : batch_size) out.push_back({e, h, lr, b});
  return out;
}

GridResult grid_search(const Grid& grid, std::size_t folds, const FoldScorer& score) {
  const auto cells = grid.cells();
  if (cells.empty()) throw ContractError("empty hyperparameter grid");
  if (folds == 0) throw ContractError("grid search needs at least one fold");
  GridResult result;
  for (const HyperParameters& hp : cells) {
    GridCell cell;
    cell.params = hp;
    for (std::size_t f = 0; f < folds; ++f) cell.fold_scores.push_back(score(hp, f));
    cell.score = std::accumulate(cell.fold_scores.begin(), cell.fold_scores.end(), 0.0) /
                 double(folds);
    if (result.cells.empty() || cell.score < result.cells[result.best].score) {
      result.best = result.cells.size();
    }
    result.cells.push_back(std::move(cell));
  }
  return result;
}

GridResult grid_search(ModelKind kind, const Grid& grid, std::span<const InnerFold> folds,
                       const ModelDimensions& dims, const TrainConfig& config,
                       std::size_t stride) {
  std::vector<PreparedSplit> prepared;
  for (const InnerFold& f : folds) prepared.push_back(prepare_split(f.train, f.valid, dims, stride));
  return grid_search(grid, folds.size(), [&](const HyperParameters& hp, std::size_t f) {
    ModelDimensions d = dims;
    d.embedding = hp.embedding;
    d.hidden = hp.hidden;
    TrainConfig c = config;
    c.learning_rate = hp.learning_rate;
    c.batch_size = hp.batch_size;
    const auto r = train(make_model(kind, d, config.seed), prepared[f].train, prepared[f].valid, c);
    return std::sqrt(r.report.best_valid_mse);
  });
}

}  // namespace retain
