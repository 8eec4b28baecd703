#pragma once

#include <array>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "retain/data.hpp"
#include "retain/model.hpp"

namespace retain {

/// True and predicted glucose (mg/dL) over consecutive grid steps of one
/// segment.
struct PredictionTrack {
  std::size_t segment = 0;
  std::size_t first_index = 0;  // t_index of the first point
  std::vector<double> truth;
  std::vector<double> predicted;

  std::size_t size() const noexcept { return truth.size(); }
};

double rmse(std::span<const double> truth, std::span<const double> predicted);
/// Percent.
double mape(std::span<const double> truth, std::span<const double> predicted);
double rmse(std::span<const PredictionTrack> tracks);
double mape(std::span<const PredictionTrack> tracks);

/// Pearson correlation; DomainError when either side is constant.
double pearson(std::span<const double> a, std::span<const double> b);

/// Shift s in [0, max_shift] maximizing corr(truth[0..n-s), pred[s..n)),
/// pooled over tracks longer than max_shift + 2; smallest s on ties.
/// Returned in minutes.
double time_lag(std::span<const PredictionTrack> tracks, std::size_t max_shift,
                double period_minutes = 5.0);

enum class PZone { A, B, C, D, E };
enum class RZone { A, B, uC, lC, uD, lD, uE, lE };
enum class Region { hypo, eu, hyper };
enum class Label { AP, BE, EP };

std::string to_string(PZone z);
std::string to_string(RZone z);
std::string to_string(Region r);
std::string to_string(Label l);

Region region_of(double truth);
/// Point grid; the rate of the reference (mg/dL/min) widens the zone limits.
PZone p_ega_zone(double truth, double predicted, double true_rate);
/// Rate grid over (reference rate, predicted rate) in mg/dL/min.
RZone r_ega_zone(double true_rate, double predicted_rate);
Label combine(PZone p, RZone r, Region region);

struct CgEgaOutcome {
  PZone p_zone = PZone::A;
  RZone r_zone = RZone::A;
  Region region = Region::eu;
  Label label = Label::AP;
};

CgEgaOutcome classify(double truth, double predicted, double true_rate, double predicted_rate);

struct CgEgaPoint {
  std::size_t segment = 0;
  std::size_t t_index = 0;
  double truth = 0.0, predicted = 0.0;
  double true_rate = 0.0, predicted_rate = 0.0;
  CgEgaOutcome outcome;
};

struct CgEgaSummary {
  // counts[region][label]
  std::array<std::array<std::size_t, 3>, 3> counts{};
  std::size_t excluded = 0;  // first point of each track (no rate)

  std::size_t total() const noexcept;
  std::size_t total(Region r) const noexcept;
  /// Percent of classified points; 0 when none were classified.
  double percent(Label l) const noexcept;
  double percent(Region r, Label l) const noexcept;
};

struct CgEgaResult {
  std::vector<CgEgaPoint> points;
  CgEgaSummary summary;
};

/// Rates are first differences divided by the step period.
CgEgaResult cg_ega(std::span<const PredictionTrack> tracks, double period_minutes = 5.0);

struct PatientMetrics {
  std::string patient;
  double rmse = 0.0, mape = 0.0, tl = 0.0;
  double ap = 0.0, be = 0.0, ep = 0.0;
  std::size_t points = 0;
};

struct MetricsReport {
  std::vector<PatientMetrics> patients;
  PatientMetrics mean;    // patient = "mean"
  PatientMetrics stddev;  // sample standard deviation, patient = "std"
};

PatientMetrics evaluate_tracks(std::string patient, std::span<const PredictionTrack> tracks,
                               std::size_t max_shift, double period_minutes = 5.0);
MetricsReport summarize(std::vector<PatientMetrics> patients);

/// Groups windows of one patient into tracks of consecutive steps.
std::vector<PredictionTrack> make_tracks(std::span<const SampleWindow> windows,
                                         std::span<const double> predictions);

/// Model output for every window (inputs already standardized).
std::vector<double> predict_all(const Model& model, std::span<const SampleWindow> windows);

/// Per patient (in order of first appearance) plus population mean and std.
MetricsReport evaluate(std::span<const SampleWindow> windows, std::span<const double> predictions,
                       std::size_t max_shift, double period_minutes = 5.0);
MetricsReport evaluate(const Model& model, std::span<const SampleWindow> windows);

void write_report_csv(std::ostream& out, const MetricsReport& report);
void write_report_json(std::ostream& out, const MetricsReport& report);
void write_points_csv(std::ostream& out, const std::string& patient, const CgEgaResult& result,
                      bool header = true);

}  // namespace retain
