#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "retain/model.hpp"
#include "retain/tensor.hpp"

namespace retain {

/// Additive decomposition of one RETAIN prediction.
///
/// omega[i][j] is the share of input x[i][j] in the prediction (in output
/// units), so that sum(omega) + bias reproduces the prediction. omega_an is
/// |omega| normalized to sum to one; it is absent when every omega is zero.
struct ContributionMap {
  Tensor omega;  // H x r
  double bias = 0.0;
  double prediction = 0.0;
  std::optional<Tensor> omega_an;
  /// |sum(omega) + bias - prediction|
  double residual = 0.0;

  bool degenerate() const noexcept { return !omega_an.has_value(); }
};

/// Relative tolerance of the decomposition identity check.
inline constexpr double kDecompositionTolerance = 1e-9;

/// Contribution of every input given fixed attention weights:
/// omega[i][j] = alpha[i] * W (beta[i] . W_emb[:, j]) * x[i][j].
/// No consistency check; this is the term-level formula.
Tensor contribution_terms(const RetainParameters& params, const Tensor& alphas,
                          const Tensor& betas, const Tensor& x);

/// Absolute normalized contributions; nullopt when all terms are zero.
std::optional<Tensor> absolute_normalized(const Tensor& omega);

/// Decomposes the prediction in `trace` (which must come from
/// retain_forward(params, x)). Throws ConsistencyError when the identity
/// sum(omega) + b == prediction fails by more than
/// kDecompositionTolerance * max(1, |prediction|).
ContributionMap contributions(const RetainParameters& params, const ForwardTrace& trace,
                              const Tensor& x);

/// Per (time offset, signal) statistic over a set of samples. `values` is
/// H x r (oldest step first) and is empty when no sample qualified.
struct ContributionProfile {
  Tensor values;
  std::size_t count = 0;
  /// Degenerate samples skipped by the aggregation.
  std::size_t excluded = 0;
};

enum class EventType { insulin, cho };

/// A contribution map plus the event metadata of its window: the age in
/// steps of the most recent insulin / CHO event inside the window.
struct AttributedSample {
  ContributionMap map;
  std::optional<std::size_t> insulin_lag;
  std::optional<std::size_t> cho_lag;
};

/// Elementwise maximum of omega_an. Throws ContractError on an empty set.
ContributionProfile max_contribution_profile(std::span<const ContributionMap> samples);
ContributionProfile max_contribution_profile(std::span<const AttributedSample> samples);

/// Mean omega_an over samples whose most recent `event` lies exactly `lag`
/// steps before prediction time. Requires lag < H.
ContributionProfile event_conditioned_profile(std::span<const AttributedSample> samples,
                                              EventType event, std::size_t lag);

/// One event-conditioned profile per lag 0..H-1.
std::vector<ContributionProfile> event_conditioned_profiles(
    std::span<const AttributedSample> samples, EventType event);

/// Mean omega_an over samples without any insulin or CHO event during the
/// last `window` steps.
ContributionProfile no_event_profile(std::span<const AttributedSample> samples,
                                     std::size_t window = 12);

/// Long-format CSV: signal,offset_min,value,count. Offsets run from
/// -(H-1)*period to 0 minutes; value is blank when count is zero.
void write_profile_csv(std::ostream& out, const ContributionProfile& profile,
                       std::size_t history, int period_minutes = 5);

/// Same layout with a leading lag_min column, one block per lag.
void write_event_profiles_csv(std::ostream& out, std::span<const ContributionProfile> profiles,
                              std::size_t history, int period_minutes = 5);

}  // namespace retain
