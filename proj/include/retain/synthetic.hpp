#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "retain/data.hpp"

namespace retain {

/// Linear impulse-response glucose simulator. Times in minutes, glucose in
/// mg/dL, gains in mg/dL at the response peak per unit / per gram.
struct SimConfig {
  std::uint64_t seed = 1;
  int days = 31;
  std::string patient_id = "patient";
  std::int64_t start = 1546300800;  // 2019-01-01T00:00:00
  std::int64_t period = 300;

  double basal = 140.0;
  std::vector<double> meal_hours{7.5, 12.5, 19.0};
  double meal_jitter = 30.0;
  double cho_mean = 50.0;
  double cho_std = 15.0;
  double cho_min = 10.0;

  double bolus_probability = 0.7;
  double insulin_per_cho = 0.1;       // units per gram
  double corrections_per_day = 1.0;  // extra boluses at random times
  double correction_min = 1.0;
  double correction_max = 4.0;

  double cho_gain = 1.6;
  double cho_tau = 30.0;
  double insulin_gain = 8.0;
  double insulin_tau = 45.0;

  double noise_std = 3.0;
  double floor = 40.0;

  /// Throws ContractError on invalid settings.
  void validate() const;
};

struct SimEvent {
  std::size_t step = 0;
  double insulin = 0.0;
  double cho = 0.0;
};

/// Rise-then-decay kernel exp(-t/tau) - exp(-3t/tau) scaled to peak 1; zero
/// for t < 0.
double response_kernel(double minutes, double tau);

/// Meals and boluses drawn from the config's seed, sorted by step.
std::vector<SimEvent> draw_events(const SimConfig& config);
/// Glucose trace for the given events (noise seeded from the config).
PatientSeries render(const SimConfig& config, std::span<const SimEvent> events);
PatientSeries simulate(const SimConfig& config);

/// Patient `index` of a cohort: own seed and id, gains, time constants and
/// basal level jittered by up to +-20 %.
SimConfig cohort_member(const SimConfig& base, std::size_t index);

}  // namespace retain
