#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "retain/model.hpp"
#include "retain/tensor.hpp"

namespace retain {

enum Signal : std::size_t { kGlucose = 0, kInsulin = 1, kCho = 2 };
inline constexpr std::size_t kSignalCount = 3;

/// Contiguous run of grid steps with a glucose value at every step.
struct Segment {
  std::int64_t start = 0;  // unix seconds of step 0
  std::vector<double> glucose;  // mg/dL
  std::vector<double> insulin;  // units
  std::vector<double> cho;      // g

  std::size_t size() const noexcept { return glucose.size(); }
};

/// One patient on a uniform grid, split into gap-free segments ordered in
/// time. Insulin and CHO keep their raw (unstandardized) values.
struct PatientSeries {
  std::string patient_id;
  std::int64_t period = 300;  // seconds
  std::vector<Segment> segments;
  /// Events whose nearest grid step had no glucose value.
  std::size_t dropped_events = 0;

  std::size_t steps() const noexcept;
  /// Throws ContractError when a pipeline invariant is broken.
  void validate() const;
};

struct GridOptions {
  std::int64_t period = 300;   // seconds between grid steps
  std::int64_t max_gap = 1800; // longest glucose gap bridged by interpolation
};

/// Parses `timestamp,glucose,insulin,cho` CSV. Glucose may be blank on
/// event-only rows. Glucose is linearly interpolated onto the grid across
/// gaps up to max_gap; longer gaps start a new segment. Events go to the
/// nearest grid step (summed when several share one).
PatientSeries parse_series_csv(std::istream& in, std::string patient_id,
                               const GridOptions& options = {});
/// Reads a CSV file; the patient id is the file stem.
PatientSeries ingest_csv(const std::filesystem::path& path, const GridOptions& options = {});

/// Writes the ingest schema, plus a segment_id column when asked.
void write_series_csv(std::ostream& out, const PatientSeries& series, bool with_segment_id = false);

/// "YYYY-MM-DDTHH:MM[:SS][Z]" (a space may replace the T) to unix seconds.
std::optional<std::int64_t> parse_timestamp(std::string_view text);
std::string format_timestamp(std::int64_t unix_seconds);

/// One training / prediction instance.
struct SampleWindow {
  Tensor x;  // H x r, rows oldest first; standardized once apply_standardizer ran
  double y = 0.0;  // glucose PH steps after the last input row, mg/dL
  std::string patient_id;
  std::size_t segment = 0;
  std::size_t t_index = 0;  // step of the last input row within its segment
  std::int64_t time = 0;    // unix seconds of that step
  std::optional<std::size_t> insulin_lag;  // steps since latest insulin event in the window
  std::optional<std::size_t> cho_lag;
};

/// Windows per segment: max(0, len - H - PH + 1), stride one.
std::vector<SampleWindow> make_windows(const PatientSeries& series, const ModelDimensions& dims);
std::vector<SampleWindow> make_windows(std::span<const PatientSeries> series,
                                       const ModelDimensions& dims);

/// Per-signal mean and standard deviation of a training window set.
struct Standardizer {
  std::array<double, kSignalCount> mean{};
  std::array<double, kSignalCount> stddev{1.0, 1.0, 1.0};
  std::size_t fit_count = 0;
  std::uint64_t fit_fingerprint = 0;

  Tensor apply(const Tensor& x) const;
  Tensor invert(const Tensor& z) const;
  bool operator==(const Standardizer&) const = default;
};

/// Identity of a window set (patient, segment, step of every window).
std::uint64_t fingerprint(std::span<const SampleWindow> windows);

/// Population statistics over every input value of `train`. A signal with
/// zero variance gets stddev 1.
Standardizer fit_standardizer(std::span<const SampleWindow> train);
std::vector<SampleWindow> apply_standardizer(const Standardizer& s,
                                             std::vector<SampleWindow> windows);

void write_standardizer(std::ostream& out, const Standardizer& s);
Standardizer read_standardizer(std::istream& in);

/// Steps [begin, end) of the concatenated segment timeline; segments cut at
/// the borders.
PatientSeries slice_steps(const PatientSeries& series, std::size_t begin, std::size_t end);

/// First floor(fraction * steps) steps train, the rest validation.
std::pair<PatientSeries, PatientSeries> chronological_split(const PatientSeries& series,
                                                            double train_fraction = 0.75);

/// Fold `fold` of a k-fold split into contiguous time blocks: block `fold`
/// validates, the remaining blocks train. Fold k-1 of k = 4 coincides with
/// the 75/25 chronological split.
std::pair<PatientSeries, PatientSeries> block_split(const PatientSeries& series, std::size_t k,
                                                    std::size_t fold);

/// Leave-one-patient-out fold with chronological train/validation parts of
/// every training patient.
struct OuterFold {
  std::size_t test_index = 0;
  std::vector<std::size_t> train_indices;
  std::vector<PatientSeries> train;
  std::vector<PatientSeries> valid;
};

std::vector<OuterFold> split_protocol(std::span<const PatientSeries> patients,
                                      double train_fraction = 0.75);

/// Model-selection fold over the training patients.
struct InnerFold {
  std::vector<PatientSeries> train;
  std::vector<PatientSeries> valid;
};

std::vector<InnerFold> inner_folds(std::span<const PatientSeries> train_patients,
                                   std::size_t k = 4);

}  // namespace retain
