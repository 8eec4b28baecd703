#include "retain/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "retain/errors.hpp"

namespace retain {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

void SimConfig::validate() const {
  const auto need = [](bool ok, const char* what) {
    if (!ok) throw ContractError(std::string("simulator: ") + what);
  };
  need(days > 0, "days must be positive");
  need(period > 0 && 86400 % period == 0, "period must divide one day");
  need(cho_gain >= 0.0 && insulin_gain >= 0.0, "gains must be non-negative");
  need(cho_tau > 0.0 && insulin_tau > 0.0, "time constants must be positive");
  need(noise_std >= 0.0, "noise std must be non-negative");
  need(floor > 0.0 && basal >= floor, "basal must be at least the positive floor");
  need(cho_mean >= 0.0 && cho_std >= 0.0 && cho_min >= 0.0, "meal sizes must be non-negative");
  need(bolus_probability >= 0.0 && bolus_probability <= 1.0, "bolus probability outside [0, 1]");
  need(insulin_per_cho >= 0.0, "insulin per gram must be non-negative");
  need(corrections_per_day >= 0.0 && correction_min >= 0.0 && correction_max >= correction_min,
       "bad correction bolus settings");
  need(meal_jitter >= 0.0, "meal jitter must be non-negative");
  for (double h : meal_hours) need(h >= 0.0 && h < 24.0, "meal hours must lie in [0, 24)");
}

double response_kernel(double minutes, double tau) {
  if (minutes < 0.0) return 0.0;
  // Peak of exp(-t/tau) - exp(-3t/tau) sits at t = tau ln(3) / 2.
  static const double peak = std::exp(-std::log(3.0) / 2.0) - std::exp(-1.5 * std::log(3.0));
  return (std::exp(-minutes / tau) - std::exp(-3.0 * minutes / tau)) / peak;
}

std::vector<SimEvent> draw_events(const SimConfig& config) {
  config.validate();
  std::mt19937_64 rng(splitmix(config.seed));
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double step_min = double(config.period) / 60.0;
  const std::size_t per_day = std::size_t(86400 / config.period);
  const std::size_t steps = per_day * std::size_t(config.days);

  std::vector<SimEvent> events;
  for (int day = 0; day < config.days; ++day) {
    for (double hour : config.meal_hours) {
      const double minute = hour * 60.0 + config.meal_jitter * jitter(rng);
      const double at = double(day) * 1440.0 + minute;
      const double cho = std::max(config.cho_min, config.cho_mean + config.cho_std * jitter(rng));
      const bool bolus = unit(rng) < config.bolus_probability;
      const double dose = cho * config.insulin_per_cho * (0.7 + 0.6 * unit(rng));
      const long step = std::lround(at / step_min);
      if (step < 0 || std::size_t(step) >= steps) continue;
      events.push_back({std::size_t(step), bolus ? dose : 0.0, cho});
    }
    std::poisson_distribution<int> corrections(config.corrections_per_day);
    const int n = config.corrections_per_day > 0.0 ? corrections(rng) : 0;
    for (int k = 0; k < n; ++k) {
      const auto step = std::size_t(day) * per_day + std::size_t(unit(rng) * double(per_day));
      const double dose =
          config.correction_min + (config.correction_max - config.correction_min) * unit(rng);
      events.push_back({std::min(step, steps - 1), dose, 0.0});
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const SimEvent& a, const SimEvent& b) { return a.step < b.step; });
  return events;
}

PatientSeries render(const SimConfig& config, std::span<const SimEvent> events) {
  config.validate();
  const double step_min = double(config.period) / 60.0;
  const std::size_t steps = std::size_t(86400 / config.period) * std::size_t(config.days);
  Segment seg;
  seg.start = config.start;
  seg.glucose.assign(steps, config.basal);
  seg.insulin.assign(steps, 0.0);
  seg.cho.assign(steps, 0.0);
  // Responses are negligible (< 1e-6 of peak) beyond 15 time constants.
  const double reach = 15.0 * std::max(config.cho_tau, config.insulin_tau);
  const auto horizon = std::size_t(std::ceil(reach / step_min));
  for (const SimEvent& e : events) {
    if (e.step >= steps) throw ContractError("simulator: event beyond the simulated span");
    if (e.insulin < 0.0 || e.cho < 0.0) throw ContractError("simulator: negative event");
    seg.insulin[e.step] += e.insulin;
    seg.cho[e.step] += e.cho;
    const std::size_t last = std::min(steps, e.step + horizon);
    for (std::size_t k = e.step; k < last; ++k) {
      const double t = double(k - e.step) * step_min;
      seg.glucose[k] += config.cho_gain * e.cho * response_kernel(t, config.cho_tau) -
                        config.insulin_gain * e.insulin * response_kernel(t, config.insulin_tau);
    }
  }
  std::mt19937_64 rng(splitmix(config.seed ^ 0x6e6f697365ull));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (double& g : seg.glucose) {
    if (config.noise_std > 0.0) g += config.noise_std * noise(rng);
    g = std::max(g, config.floor);
  }
  PatientSeries series;
  series.patient_id = config.patient_id;
  series.period = config.period;
  series.segments.push_back(std::move(seg));
  return series;
}

PatientSeries simulate(const SimConfig& config) {
  const auto events = draw_events(config);
  return render(config, events);
}

SimConfig cohort_member(const SimConfig& base, std::size_t index) {
  SimConfig c = base;
  c.seed = splitmix(base.seed * 1000003ull + index);
  char id[32];
  std::snprintf(id, sizeof id, "patient%02zu", index + 1);
  c.patient_id = id;
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> factor(0.8, 1.2);
  c.cho_gain *= factor(rng);
  c.insulin_gain *= factor(rng);
  c.cho_tau *= factor(rng);
  c.insulin_tau *= factor(rng);
  c.basal = std::max(c.floor, c.basal * factor(rng));
  c.validate();
  return c;
}

}  // namespace retain
