#include "retain/interpretation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "retain/errors.hpp"
#include "retain/text.hpp"

namespace retain {

namespace {

constexpr const char* kSignalNames[] = {"glucose", "insulin", "cho"};

const char* signal_name(std::size_t j) { return j < 3 ? kSignalNames[j] : "input"; }

ContributionProfile mean_of(std::span<const AttributedSample> samples, auto&& keep) {
  ContributionProfile profile;
  for (const AttributedSample& s : samples) {
    if (!keep(s)) continue;
    if (s.map.degenerate()) {
      ++profile.excluded;
      continue;
    }
    const Tensor& an = *s.map.omega_an;
    if (profile.count == 0) profile.values = Tensor(an.shape());
    if (an.shape() != profile.values.shape()) {
      throw ShapeError("contribution maps of different shapes in one profile");
    }
    for (std::size_t k = 0; k < an.size(); ++k) profile.values[k] += an[k];
    ++profile.count;
  }
  if (profile.count > 0) {
    for (double& v : profile.values.data()) v /= double(profile.count);
  }
  return profile;
}

std::optional<std::size_t> lag_of(const AttributedSample& s, EventType event) {
  return event == EventType::insulin ? s.insulin_lag : s.cho_lag;
}

void write_rows(std::ostream& out, const ContributionProfile& profile, std::size_t history,
                int period, const std::string& prefix) {
  const std::size_t signals = profile.count > 0 ? profile.values.cols() : 3;
  for (std::size_t j = 0; j < signals; ++j) {
    for (std::size_t i = 0; i < history; ++i) {
      const long offset = -static_cast<long>((history - 1 - i) * period);
      out << prefix << signal_name(j) << ',' << offset << ',';
      if (profile.count > 0) out << format_number(profile.values.at(i, j), 12);
      out << ',' << profile.count << '\n';
    }
  }
}

}  // namespace

Tensor contribution_terms(const RetainParameters& params, const Tensor& alphas,
                          const Tensor& betas, const Tensor& x) {
  const std::size_t m = params.embedding.rows(), r = params.embedding.cols();
  const std::size_t h = x.rows();
  if (x.rank() != 2 || x.cols() != r || alphas.size() != h || betas.rows() != h ||
      betas.cols() != m || params.output_weight.size() != m) {
    throw ShapeError("contribution_terms: x " + x.shape_string() + ", alphas " +
                     alphas.shape_string() + ", betas " + betas.shape_string() +
                     " for an embedding of " + params.embedding.shape_string());
  }
  Tensor omega(Shape{h, r});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      double u = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        u += params.output_weight[k] * betas.at(i, k) * params.embedding.at(k, j);
      }
      omega.at(i, j) = alphas[i] * u * x.at(i, j);
    }
  }
  return omega;
}

std::optional<Tensor> absolute_normalized(const Tensor& omega) {
  double total = 0.0;
  for (double v : omega.data()) total += std::abs(v);
  if (total == 0.0) return std::nullopt;
  Tensor an(omega.shape());
  for (std::size_t k = 0; k < omega.size(); ++k) an[k] = std::abs(omega[k]) / total;
  return an;
}

ContributionMap contributions(const RetainParameters& params, const ForwardTrace& trace,
                              const Tensor& x) {
  if (trace.embeddings.shape() != Shape{x.rows(), params.embedding.rows()}) {
    throw ShapeError("trace of shape " + trace.embeddings.shape_string() +
                     " does not match input " + x.shape_string());
  }
  ContributionMap map;
  map.omega = contribution_terms(params, trace.alphas, trace.betas, x);
  map.bias = params.output_bias.item();
  map.prediction = trace.prediction;
  double total = map.bias;
  for (double v : map.omega.data()) total += v;
  map.residual = std::abs(total - trace.prediction);
  if (map.residual > kDecompositionTolerance * std::max(1.0, std::abs(trace.prediction))) {
    throw ConsistencyError("contributions do not reproduce the prediction (residual " +
                           format_number(map.residual, 6) + "); trace and parameters disagree");
  }
  map.omega_an = absolute_normalized(map.omega);
  return map;
}

ContributionProfile max_contribution_profile(std::span<const ContributionMap> samples) {
  if (samples.empty()) throw ContractError("max_contribution_profile of an empty sample set");
  ContributionProfile profile;
  for (const ContributionMap& s : samples) {
    if (s.degenerate()) {
      ++profile.excluded;
      continue;
    }
    const Tensor& an = *s.omega_an;
    if (profile.count == 0) {
      profile.values = an;
    } else {
      if (an.shape() != profile.values.shape()) {
        throw ShapeError("contribution maps of different shapes in one profile");
      }
      for (std::size_t k = 0; k < an.size(); ++k) {
        profile.values[k] = std::max(profile.values[k], an[k]);
      }
    }
    ++profile.count;
  }
  return profile;
}

ContributionProfile max_contribution_profile(std::span<const AttributedSample> samples) {
  std::vector<ContributionMap> maps;
  maps.reserve(samples.size());
  for (const auto& s : samples) maps.push_back(s.map);
  return max_contribution_profile(maps);
}

ContributionProfile event_conditioned_profile(std::span<const AttributedSample> samples,
                                              EventType event, std::size_t lag) {
  for (const auto& s : samples) {
    if (lag >= s.map.omega.rows()) {
      throw ContractError("event lag " + std::to_string(lag) + " outside the history window");
    }
  }
  return mean_of(samples, [&](const AttributedSample& s) { return lag_of(s, event) == lag; });
}

std::vector<ContributionProfile> event_conditioned_profiles(
    std::span<const AttributedSample> samples, EventType event) {
  if (samples.empty()) return {};
  const std::size_t history = samples.front().map.omega.rows();
  std::vector<ContributionProfile> out;
  out.reserve(history);
  for (std::size_t lag = 0; lag < history; ++lag) {
    out.push_back(event_conditioned_profile(samples, event, lag));
  }
  return out;
}

ContributionProfile no_event_profile(std::span<const AttributedSample> samples,
                                     std::size_t window) {
  const auto quiet = [window](const std::optional<std::size_t>& lag) {
    return !lag || *lag >= window;
  };
  return mean_of(samples, [&](const AttributedSample& s) {
    return quiet(s.insulin_lag) && quiet(s.cho_lag);
  });
}

void write_profile_csv(std::ostream& out, const ContributionProfile& profile,
                       std::size_t history, int period_minutes) {
  out << "signal,offset_min,value,count\n";
  write_rows(out, profile, history, period_minutes, "");
}

void write_event_profiles_csv(std::ostream& out, std::span<const ContributionProfile> profiles,
                              std::size_t history, int period_minutes) {
  out << "lag_min,signal,offset_min,value,count\n";
  for (std::size_t lag = 0; lag < profiles.size(); ++lag) {
    write_rows(out, profiles[lag], history, period_minutes,
               std::to_string(lag * period_minutes) + ",");
  }
}

}  // namespace retain
