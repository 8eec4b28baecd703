#include "retain/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "retain/errors.hpp"
#include "retain/text.hpp"

namespace retain {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  int v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

struct Row {
  std::int64_t time = 0;
  std::optional<double> glucose;
  double insulin = 0.0;
  double cho = 0.0;
  std::size_t line = 0;
};

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw FormatError("line " + std::to_string(line) + ": " + what);
}

}  // namespace

std::optional<std::int64_t> parse_timestamp(std::string_view text) {
  text = trim(text);
  if (!text.empty() && (text.back() == 'Z' || text.back() == 'z')) text.remove_suffix(1);
  // YYYY-MM-DD[T ]HH:MM[:SS]
  if (text.size() != 16 && text.size() != 19) return std::nullopt;
  if (text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') || text[13] != ':') {
    return std::nullopt;
  }
  int year, month, day, hour, minute, second = 0;
  if (!parse_int(text.substr(0, 4), year) || !parse_int(text.substr(5, 2), month) ||
      !parse_int(text.substr(8, 2), day) || !parse_int(text.substr(11, 2), hour) ||
      !parse_int(text.substr(14, 2), minute)) {
    return std::nullopt;
  }
  if (text.size() == 19 && (text[16] != ':' || !parse_int(text.substr(17, 2), second))) {
    return std::nullopt;
  }
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{unsigned(month)},
                           std::chrono::day{unsigned(day)}};
  if (!ymd.ok() || hour > 23 || minute > 59 || second > 59) return std::nullopt;
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return std::int64_t(days) * 86400 + hour * 3600 + minute * 60 + second;
}

std::string format_timestamp(std::int64_t unix_seconds) {
  using namespace std::chrono;
  const std::int64_t days = floor_div(unix_seconds, 86400);
  std::int64_t rest = unix_seconds - days * 86400;
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  const int hour = int(rest / 3600);
  rest %= 3600;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", int(ymd.year()),
                unsigned(ymd.month()), unsigned(ymd.day()), hour, int(rest / 60), int(rest % 60));
  return buf;
}

std::size_t PatientSeries::steps() const noexcept {
  std::size_t n = 0;
  for (const Segment& s : segments) n += s.size();
  return n;
}

void PatientSeries::validate() const {
  if (period <= 0) throw ContractError("series period must be positive");
  std::int64_t earliest = std::numeric_limits<std::int64_t>::min();
  for (const Segment& s : segments) {
    if (s.size() == 0) throw ContractError(patient_id + ": empty segment");
    if (s.insulin.size() != s.size() || s.cho.size() != s.size()) {
      throw ContractError(patient_id + ": segment channels differ in length");
    }
    if (s.start < earliest) throw ContractError(patient_id + ": segments overlap or are unordered");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!(s.glucose[i] > 0.0) || !std::isfinite(s.glucose[i])) {
        throw ContractError(patient_id + ": non-positive glucose");
      }
      if (!(s.insulin[i] >= 0.0) || !(s.cho[i] >= 0.0) || !std::isfinite(s.insulin[i]) ||
          !std::isfinite(s.cho[i])) {
        throw ContractError(patient_id + ": negative or non-finite event value");
      }
    }
    earliest = s.start + std::int64_t(s.size()) * period;
  }
}

PatientSeries parse_series_csv(std::istream& in, std::string patient_id,
                               const GridOptions& options) {
  if (options.period <= 0 || options.max_gap < 0) {
    throw ContractError("grid period must be positive and gap threshold non-negative");
  }
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> columns;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto names = split(line, ',');
    for (std::size_t i = 0; i < names.size(); ++i) columns[std::string(trim(names[i]))] = i;
    break;
  }
  for (const char* required : {"timestamp", "glucose", "insulin", "cho"}) {
    if (!columns.count(required)) {
      fail(line_no, std::string("missing column '") + required + "' in header");
    }
  }
  const std::size_t c_time = columns["timestamp"], c_glu = columns["glucose"],
                    c_ins = columns["insulin"], c_cho = columns["cho"];
  const std::size_t width = std::max({c_time, c_glu, c_ins, c_cho}) + 1;

  std::vector<Row> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() < width) fail(line_no, "expected at least " + std::to_string(width) + " fields");
    Row row;
    row.line = line_no;
    const auto t = parse_timestamp(fields[c_time]);
    if (!t) fail(line_no, "unparseable timestamp '" + fields[c_time] + "'");
    row.time = *t;
    const auto number = [&](std::size_t c, const char* name, bool allow_blank) -> std::optional<double> {
      if (trim(fields[c]).empty()) {
        if (allow_blank) return std::nullopt;
        fail(line_no, std::string("blank ") + name);
      }
      double v = 0.0;
      if (!parse_double(fields[c], v) || !std::isfinite(v)) {
        fail(line_no, std::string("unparseable ") + name + " '" + fields[c] + "'");
      }
      return v;
    };
    row.glucose = number(c_glu, "glucose", true);
    row.insulin = number(c_ins, "insulin", true).value_or(0.0);
    row.cho = number(c_cho, "cho", true).value_or(0.0);
    if (row.glucose && *row.glucose <= 0.0) fail(line_no, "glucose must be positive");
    if (row.insulin < 0.0 || row.cho < 0.0) fail(line_no, "insulin and cho must be non-negative");
    if (!rows.empty() && row.time < rows.back().time) fail(line_no, "timestamps go backwards");
    rows.push_back(row);
  }

  PatientSeries series;
  series.patient_id = std::move(patient_id);
  series.period = options.period;

  std::vector<const Row*> obs;
  for (const Row& r : rows) {
    if (!r.glucose) continue;
    if (!obs.empty() && obs.back()->time == r.time) fail(r.line, "duplicate glucose timestamp");
    obs.push_back(&r);
  }
  if (obs.empty()) return series;

  const std::int64_t origin = obs.front()->time;
  const std::size_t n = std::size_t((obs.back()->time - origin) / options.period) + 1;
  std::vector<double> glucose(n, kMissing), insulin(n, 0.0), cho(n, 0.0);
  std::size_t j = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::int64_t t = origin + std::int64_t(k) * options.period;
    while (j + 1 < obs.size() && obs[j + 1]->time <= t) ++j;
    if (obs[j]->time == t) {
      glucose[k] = *obs[j]->glucose;
    } else if (j + 1 < obs.size() && obs[j + 1]->time - obs[j]->time <= options.max_gap) {
      const double w = double(t - obs[j]->time) / double(obs[j + 1]->time - obs[j]->time);
      glucose[k] = *obs[j]->glucose + w * (*obs[j + 1]->glucose - *obs[j]->glucose);
    }
  }
  for (const Row& r : rows) {
    if (r.insulin == 0.0 && r.cho == 0.0) continue;
    const std::int64_t k = floor_div(r.time - origin + options.period / 2, options.period);
    if (k < 0 || k >= std::int64_t(n) || std::isnan(glucose[std::size_t(k)])) {
      ++series.dropped_events;
      continue;
    }
    insulin[std::size_t(k)] += r.insulin;
    cho[std::size_t(k)] += r.cho;
  }
  for (std::size_t k = 0; k < n;) {
    if (std::isnan(glucose[k])) {
      ++k;
      continue;
    }
    Segment seg;
    seg.start = origin + std::int64_t(k) * options.period;
    for (; k < n && !std::isnan(glucose[k]); ++k) {
      seg.glucose.push_back(glucose[k]);
      seg.insulin.push_back(insulin[k]);
      seg.cho.push_back(cho[k]);
    }
    series.segments.push_back(std::move(seg));
  }
  return series;
}

PatientSeries ingest_csv(const std::filesystem::path& path, const GridOptions& options) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return parse_series_csv(in, path.stem().string(), options);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_series_csv(std::ostream& out, const PatientSeries& series, bool with_segment_id) {
  out << "timestamp,glucose,insulin,cho" << (with_segment_id ? ",segment_id" : "") << '\n';
  for (std::size_t s = 0; s < series.segments.size(); ++s) {
    const Segment& seg = series.segments[s];
    for (std::size_t i = 0; i < seg.size(); ++i) {
      out << format_timestamp(seg.start + std::int64_t(i) * series.period) << ','
          << format_number(seg.glucose[i], 12) << ',' << format_number(seg.insulin[i], 12) << ','
          << format_number(seg.cho[i], 12);
      if (with_segment_id) out << ',' << s;
      out << '\n';
    }
  }
}

std::vector<SampleWindow> make_windows(const PatientSeries& series, const ModelDimensions& dims) {
  dims.validate();
  if (dims.inputs != kSignalCount) {
    throw ShapeError("the data pipeline produces " + std::to_string(kSignalCount) +
                     " input signals, model expects " + std::to_string(dims.inputs));
  }
  const std::size_t h = dims.history, ph = dims.horizon;
  std::vector<SampleWindow> out;
  for (std::size_t s = 0; s < series.segments.size(); ++s) {
    const Segment& seg = series.segments[s];
    if (seg.size() < h + ph) continue;
    for (std::size_t t = h - 1; t + ph < seg.size(); ++t) {
      SampleWindow w;
      w.x = Tensor(Shape{h, kSignalCount});
      for (std::size_t i = 0; i < h; ++i) {
        const std::size_t k = t + 1 - h + i;
        w.x.at(i, kGlucose) = seg.glucose[k];
        w.x.at(i, kInsulin) = seg.insulin[k];
        w.x.at(i, kCho) = seg.cho[k];
      }
      w.y = seg.glucose[t + ph];
      w.patient_id = series.patient_id;
      w.segment = s;
      w.t_index = t;
      w.time = seg.start + std::int64_t(t) * series.period;
      for (std::size_t lag = 0; lag < h; ++lag) {
        if (!w.insulin_lag && seg.insulin[t - lag] > 0.0) w.insulin_lag = lag;
        if (!w.cho_lag && seg.cho[t - lag] > 0.0) w.cho_lag = lag;
      }
      out.push_back(std::move(w));
    }
  }
  return out;
}

std::vector<SampleWindow> make_windows(std::span<const PatientSeries> series,
                                       const ModelDimensions& dims) {
  std::vector<SampleWindow> out;
  for (const PatientSeries& s : series) {
    auto w = make_windows(s, dims);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

Tensor Standardizer::apply(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != kSignalCount) {
    throw ShapeError("standardizer expects H x 3 windows, got " + x.shape_string());
  }
  Tensor z(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < kSignalCount; ++j) z.at(i, j) = (x.at(i, j) - mean[j]) / stddev[j];
  return z;
}

Tensor Standardizer::invert(const Tensor& z) const {
  if (z.rank() != 2 || z.cols() != kSignalCount) {
    throw ShapeError("standardizer expects H x 3 windows, got " + z.shape_string());
  }
  Tensor x(z.shape());
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < kSignalCount; ++j) x.at(i, j) = z.at(i, j) * stddev[j] + mean[j];
  return x;
}

std::uint64_t fingerprint(std::span<const SampleWindow> windows) {
  std::uint64_t h = 1469598103934665603ull;
  const auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  for (const SampleWindow& w : windows) {
    for (char c : w.patient_id) mix(std::uint8_t(c));
    mix(w.segment);
    mix(w.t_index);
    mix(std::uint64_t(w.time));
  }
  return h;
}

Standardizer fit_standardizer(std::span<const SampleWindow> train) {
  if (train.empty()) throw ContractError("cannot fit a standardizer on an empty training set");
  Standardizer s;
  std::array<double, kSignalCount> total{};
  std::size_t n = 0;
  for (const SampleWindow& w : train) {
    if (w.x.rank() != 2 || w.x.cols() != kSignalCount) {
      throw ShapeError("standardizer expects H x 3 windows, got " + w.x.shape_string());
    }
    for (std::size_t i = 0; i < w.x.rows(); ++i)
      for (std::size_t j = 0; j < kSignalCount; ++j) total[j] += w.x.at(i, j);
    n += w.x.rows();
  }
  for (std::size_t j = 0; j < kSignalCount; ++j) s.mean[j] = total[j] / double(n);
  std::array<double, kSignalCount> sq{};
  for (const SampleWindow& w : train) {
    for (std::size_t i = 0; i < w.x.rows(); ++i)
      for (std::size_t j = 0; j < kSignalCount; ++j) {
        const double d = w.x.at(i, j) - s.mean[j];
        sq[j] += d * d;
      }
  }
  for (std::size_t j = 0; j < kSignalCount; ++j) {
    const double sd = std::sqrt(sq[j] / double(n));
    s.stddev[j] = sd > 1e-12 * std::max(1.0, std::abs(s.mean[j])) ? sd : 1.0;
  }
  s.fit_count = train.size();
  s.fit_fingerprint = fingerprint(train);
  return s;
}

std::vector<SampleWindow> apply_standardizer(const Standardizer& s,
                                             std::vector<SampleWindow> windows) {
  for (SampleWindow& w : windows) w.x = s.apply(w.x);
  return windows;
}

void write_standardizer(std::ostream& out, const Standardizer& s) {
  constexpr const char* names[] = {"glucose", "insulin", "cho"};
  out << "key,value\n";
  for (std::size_t j = 0; j < kSignalCount; ++j) {
    out << names[j] << "_mean," << format_exact(s.mean[j]) << '\n';
    out << names[j] << "_std," << format_exact(s.stddev[j]) << '\n';
  }
  out << "fit_count," << s.fit_count << '\n';
  out << "fit_fingerprint," << s.fit_fingerprint << '\n';
}

Standardizer read_standardizer(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::getline(in, line);
  if (trim(line) != "key,value") throw FormatError("standardizer file: bad header");
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 2) throw FormatError("standardizer file: bad line '" + line + "'");
    kv[std::string(trim(f[0]))] = std::string(trim(f[1]));
  }
  const auto get = [&kv](const std::string& k) {
    const auto it = kv.find(k);
    if (it == kv.end()) throw FormatError("standardizer file: missing " + k);
    return it->second;
  };
  Standardizer s;
  constexpr const char* names[] = {"glucose", "insulin", "cho"};
  for (std::size_t j = 0; j < kSignalCount; ++j) {
    if (!parse_double(get(std::string(names[j]) + "_mean"), s.mean[j]) ||
        !parse_double(get(std::string(names[j]) + "_std"), s.stddev[j]) || !(s.stddev[j] > 0)) {
      throw FormatError("standardizer file: bad statistics for " + std::string(names[j]));
    }
  }
  try {
    s.fit_count = std::stoull(get("fit_count"));
    s.fit_fingerprint = std::stoull(get("fit_fingerprint"));
  } catch (const std::logic_error&) {
    throw FormatError("standardizer file: bad fit record");
  }
  return s;
}

PatientSeries slice_steps(const PatientSeries& series, std::size_t begin, std::size_t end) {
  PatientSeries out;
  out.patient_id = series.patient_id;
  out.period = series.period;
  std::size_t offset = 0;
  for (const Segment& seg : series.segments) {
    const std::size_t lo = std::max(begin, offset), hi = std::min(end, offset + seg.size());
    if (lo < hi) {
      Segment part;
      const std::size_t a = lo - offset, b = hi - offset;
      part.start = seg.start + std::int64_t(a) * series.period;
      part.glucose.assign(seg.glucose.begin() + a, seg.glucose.begin() + b);
      part.insulin.assign(seg.insulin.begin() + a, seg.insulin.begin() + b);
      part.cho.assign(seg.cho.begin() + a, seg.cho.begin() + b);
      out.segments.push_back(std::move(part));
    }
    offset += seg.size();
  }
  return out;
}

std::pair<PatientSeries, PatientSeries> chronological_split(const PatientSeries& series,
                                                            double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ContractError("train fraction must lie in (0, 1)");
  }
  const std::size_t n = series.steps();
  const auto cut = static_cast<std::size_t>(std::floor(train_fraction * double(n)));
  return {slice_steps(series, 0, cut), slice_steps(series, cut, n)};
}

std::pair<PatientSeries, PatientSeries> block_split(const PatientSeries& series, std::size_t k,
                                                    std::size_t fold) {
  if (k < 2 || fold >= k) throw ContractError("block split needs k >= 2 and fold < k");
  const std::size_t n = series.steps();
  const std::size_t lo = fold * n / k, hi = (fold + 1) * n / k;
  PatientSeries train = slice_steps(series, 0, lo);
  PatientSeries tail = slice_steps(series, hi, n);
  train.segments.insert(train.segments.end(), tail.segments.begin(), tail.segments.end());
  return {std::move(train), slice_steps(series, lo, hi)};
}

std::vector<OuterFold> split_protocol(std::span<const PatientSeries> patients,
                                      double train_fraction) {
  if (patients.size() < 2) throw ContractError("split protocol needs at least two patients");
  std::vector<OuterFold> folds;
  for (std::size_t test = 0; test < patients.size(); ++test) {
    OuterFold fold;
    fold.test_index = test;
    for (std::size_t p = 0; p < patients.size(); ++p) {
      if (p == test) continue;
      fold.train_indices.push_back(p);
      auto [train, valid] = chronological_split(patients[p], train_fraction);
      fold.train.push_back(std::move(train));
      fold.valid.push_back(std::move(valid));
    }
    folds.push_back(std::move(fold));
  }
  return folds;
}

std::vector<InnerFold> inner_folds(std::span<const PatientSeries> train_patients, std::size_t k) {
  if (train_patients.empty()) throw ContractError("inner folds need training patients");
  std::vector<InnerFold> folds(k);
  for (std::size_t f = 0; f < k; ++f) {
    for (const PatientSeries& p : train_patients) {
      auto [train, valid] = block_split(p, k, f);
      folds[f].train.push_back(std::move(train));
      folds[f].valid.push_back(std::move(valid));
    }
  }
  return folds;
}

}  // namespace retain
