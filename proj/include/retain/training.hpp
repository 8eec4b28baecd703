#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "retain/data.hpp"
#include "retain/model.hpp"

namespace retain {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 50;
  std::size_t patience = 25;
  std::size_t max_epochs = 500;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_mse = 0.0;  // mg/dL^2, mean over the epoch's batches
  double valid_mse = 0.0;  // mg/dL^2, after the epoch
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
  double best_valid_mse = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Model model;  // parameters of the best validation epoch
  TrainReport report;
};

/// Adam state for one model's parameter set.
class Adam {
 public:
  Adam(const Model& model, const TrainConfig& config);
  void step(Model& model, const Model& grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  TrainConfig config_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

/// Mean squared error of `model` on one batch against `targets`, with the
/// gradient of that loss written to `grads` (same alternative as model).
double batch_gradient(const Model& model, std::span<const Tensor* const> inputs,
                      std::span<const double> targets, Model& grads);

/// Batched inference; agrees with predict() per window up to rounding.
std::vector<double> predict_batched(const Model& model, std::span<const SampleWindow> windows,
                                    std::size_t batch = 256);

double mean_squared_error(const Model& model, std::span<const SampleWindow> windows);

/// Minimizes MSE with Adam on seeded per-epoch shuffles. Targets are scaled
/// to unit variance while training; the scale is folded back into the output
/// layer so the returned model predicts mg/dL. Stops once `patience`
/// consecutive epochs brought no strict improvement of validation MSE and
/// restores the best epoch.
TrainResult train(Model model, std::span<const SampleWindow> train_set,
                  std::span<const SampleWindow> valid_set, const TrainConfig& config);

void write_train_report_csv(std::ostream& out, const TrainReport& report);

/// Standardized windows of one split, the standardizer fit on its training
/// part only. `stride` keeps every stride-th window.
struct PreparedSplit {
  Standardizer standardizer;
  std::vector<SampleWindow> train;
  std::vector<SampleWindow> valid;
};

PreparedSplit prepare_split(std::span<const PatientSeries> train,
                            std::span<const PatientSeries> valid, const ModelDimensions& dims,
                            std::size_t stride = 1);

std::vector<SampleWindow> thin(std::vector<SampleWindow> windows, std::size_t stride);

struct HyperParameters {
  std::size_t embedding = 64;
  std::size_t hidden = 128;
  double learning_rate = 1e-3;
  std::size_t batch_size = 50;

  bool operator==(const HyperParameters&) const = default;
};

/// Cartesian grid; cells() enumerates it with embedding varying slowest and
/// batch size fastest.
struct Grid {
  std::vector<std::size_t> embedding{64};
  std::vector<std::size_t> hidden{128};
  std::vector<double> learning_rate{1e-3};
  std::vector<std::size_t> batch_size{50};

  std::vector<HyperParameters> cells() const;
};

struct GridCell {
  HyperParameters params;
  std::vector<double> fold_scores;  // validation RMSE per fold
  double score = 0.0;               // mean over folds
};

struct GridResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;  // first cell with the lowest score

  const GridCell& best_cell() const { return cells.at(best); }
};

using FoldScorer = std::function<double(const HyperParameters&, std::size_t fold)>;

GridResult grid_search(const Grid& grid, std::size_t folds, const FoldScorer& score);

/// Trains `kind` on every inner fold for every cell.
GridResult grid_search(ModelKind kind, const Grid& grid, std::span<const InnerFold> folds,
                       const ModelDimensions& dims, const TrainConfig& config,
                       std::size_t stride = 1);

}  // namespace retain
