#include "retain/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"

#include "retain/errors.hpp"
#include "retain/text.hpp"

namespace retain {

namespace {

void check_pair(std::span<const double> truth, std::span<const double> predicted) {
  if (truth.size() != predicted.size()) {
    throw ShapeError("truth and prediction lengths differ (" + std::to_string(truth.size()) +
                     " vs " + std::to_string(predicted.size()) + ")");
  }
  if (truth.empty()) throw ContractError("metric of an empty track");
}

struct Pooled {
  std::vector<double> truth, predicted;
};

Pooled pool(std::span<const PredictionTrack> tracks) {
  Pooled p;
  for (const PredictionTrack& t : tracks) {
    check_pair(t.truth, t.predicted);
    p.truth.insert(p.truth.end(), t.truth.begin(), t.truth.end());
    p.predicted.insert(p.predicted.end(), t.predicted.begin(), t.predicted.end());
  }
  return p;
}

}  // namespace

double rmse(std::span<const double> truth, std::span<const double> predicted) {
  check_pair(truth, predicted);
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = predicted[i] - truth[i];
    acc += d * d;
  }
  return std::sqrt(acc / double(truth.size()));
}

double mape(std::span<const double> truth, std::span<const double> predicted) {
  check_pair(truth, predicted);
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == 0.0) throw DomainError("MAPE undefined for a zero true value");
    acc += std::abs((predicted[i] - truth[i]) / truth[i]);
  }
  return 100.0 * acc / double(truth.size());
}

double rmse(std::span<const PredictionTrack> tracks) {
  const Pooled p = pool(tracks);
  return rmse(p.truth, p.predicted);
}

double mape(std::span<const PredictionTrack> tracks) {
  const Pooled p = pool(tracks);
  return mape(p.truth, p.predicted);
}

double pearson(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b);
  const double n = double(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw DomainError("correlation of a constant signal");
  return sab / std::sqrt(saa * sbb);
}

double time_lag(std::span<const PredictionTrack> tracks, std::size_t max_shift,
                double period_minutes) {
  std::vector<const PredictionTrack*> usable;
  for (const PredictionTrack& t : tracks) {
    check_pair(t.truth, t.predicted);
    if (t.size() > max_shift + 2) usable.push_back(&t);
  }
  if (usable.empty()) {
    throw ContractError("time lag needs a track longer than " + std::to_string(max_shift + 2) +
                        " points");
  }
  std::size_t best_shift = 0;
  double best = -2.0;
  for (std::size_t s = 0; s <= max_shift; ++s) {
    std::vector<double> a, b;
    for (const PredictionTrack* t : usable) {
      const std::size_t n = t->size();
      a.insert(a.end(), t->truth.begin(), t->truth.begin() + std::ptrdiff_t(n - s));
      b.insert(b.end(), t->predicted.begin() + std::ptrdiff_t(s), t->predicted.end());
    }
    const double c = pearson(a, b);
    if (c > best) {
      best = c;
      best_shift = s;
    }
  }
  return period_minutes * double(best_shift);
}

std::string to_string(PZone z) {
  constexpr const char* names[] = {"A", "B", "C", "D", "E"};
  return names[int(z)];
}

std::string to_string(RZone z) {
  constexpr const char* names[] = {"A", "B", "uC", "lC", "uD", "lD", "uE", "lE"};
  return names[int(z)];
}

std::string to_string(Region r) {
  constexpr const char* names[] = {"hypo", "eu", "hyper"};
  return names[int(r)];
}

std::string to_string(Label l) {
  constexpr const char* names[] = {"AP", "BE", "EP"};
  return names[int(l)];
}

Region region_of(double truth) {
  if (truth < 70.0) return Region::hypo;
  if (truth <= 180.0) return Region::eu;
  return Region::hyper;
}

PZone p_ega_zone(double truth, double predicted, double true_rate) {
  // Falling reference widens the upper limits, rising widens the lower ones.
  double up = 0.0, lo = 0.0;
  if (true_rate < -2.0) up = 20.0;
  else if (true_rate < -1.0) up = 10.0;
  if (true_rate > 2.0) lo = 20.0;
  else if (true_rate > 1.0) lo = 10.0;

  const double y = truth, p = predicted;
  if ((y <= 70.0 && p <= 70.0 + up) || (p >= 0.8 * y - lo && p <= 1.2 * y + up)) return PZone::A;
  if ((y > 180.0 && p < 70.0 - lo) || (y <= 70.0 && p > 180.0 + up)) return PZone::E;
  if ((y <= 70.0 && p > 70.0 + up && p > 1.2 * y + up && p <= 180.0 + up) ||
      (y > 240.0 && p >= 70.0 - lo && p < 180.0 - lo)) {
    return PZone::D;
  }
  if ((y > 70.0 && p > y + 110.0 + up) || (y <= 180.0 && p < 1.4 * y - 182.0 - lo)) {
    return PZone::C;
  }
  return PZone::B;
}

RZone r_ega_zone(double true_rate, double predicted_rate) {
  const double x = true_rate, y = predicted_rate;
  const bool same_sign = (x > 0.0 && y > 0.0) || (x < 0.0 && y < 0.0);
  if (std::abs(y - x) <= 1.0 ||
      (same_sign && std::abs(y) >= 0.5 * std::abs(x) && std::abs(y) <= 2.0 * std::abs(x))) {
    return RZone::A;
  }
  if (x < -1.0 && y > 1.0) return RZone::uE;
  if (x > 1.0 && y < -1.0) return RZone::lE;
  const bool flat_pred = y >= -1.0 && y <= 1.0;
  const bool flat_true = x >= -1.0 && x <= 1.0;
  if (flat_pred && y > x + 2.0) return RZone::uD;
  if (flat_pred && y < x - 2.0) return RZone::lD;
  if (flat_true && y > x + 2.0) return RZone::uC;
  if (flat_true && y < x - 2.0) return RZone::lC;
  return RZone::B;
}

Label combine(PZone p, RZone r, Region region) {
  if (p == PZone::C || p == PZone::D || p == PZone::E) return Label::EP;
  const bool r_ok = r == RZone::A || r == RZone::B;
  switch (region) {
    case Region::hypo:
      if (r == RZone::uD || r == RZone::uE) return Label::EP;
      if (p == PZone::A && r_ok) return Label::AP;
      return Label::BE;
    case Region::eu:
      if (r == RZone::uE || r == RZone::lE) return Label::EP;
      return r_ok ? Label::AP : Label::BE;
    case Region::hyper:
      if (r == RZone::uE || r == RZone::lE) return Label::EP;
      if (p == PZone::A && r_ok) return Label::AP;
      return Label::BE;
  }
  return Label::EP;
}

CgEgaOutcome classify(double truth, double predicted, double true_rate, double predicted_rate) {
  CgEgaOutcome o;
  o.p_zone = p_ega_zone(truth, predicted, true_rate);
  o.r_zone = r_ega_zone(true_rate, predicted_rate);
  o.region = region_of(truth);
  o.label = combine(o.p_zone, o.r_zone, o.region);
  return o;
}

std::size_t CgEgaSummary::total() const noexcept {
  std::size_t n = 0;
  for (const auto& row : counts)
    for (std::size_t c : row) n += c;
  return n;
}

std::size_t CgEgaSummary::total(Region r) const noexcept {
  std::size_t n = 0;
  for (std::size_t c : counts[std::size_t(r)]) n += c;
  return n;
}

double CgEgaSummary::percent(Label l) const noexcept {
  const std::size_t n = total();
  if (n == 0) return 0.0;
  std::size_t k = 0;
  for (const auto& row : counts) k += row[std::size_t(l)];
  return 100.0 * double(k) / double(n);
}

double CgEgaSummary::percent(Region r, Label l) const noexcept {
  const std::size_t n = total(r);
  return n == 0 ? 0.0 : 100.0 * double(counts[std::size_t(r)][std::size_t(l)]) / double(n);
}

CgEgaResult cg_ega(std::span<const PredictionTrack> tracks, double period_minutes) {
  CgEgaResult result;
  for (const PredictionTrack& t : tracks) {
    check_pair(t.truth, t.predicted);
    ++result.summary.excluded;
    for (std::size_t i = 1; i < t.size(); ++i) {
      CgEgaPoint pt;
      pt.segment = t.segment;
      pt.t_index = t.first_index + i;
      pt.truth = t.truth[i];
      pt.predicted = t.predicted[i];
      pt.true_rate = (t.truth[i] - t.truth[i - 1]) / period_minutes;
      pt.predicted_rate = (t.predicted[i] - t.predicted[i - 1]) / period_minutes;
      pt.outcome = classify(pt.truth, pt.predicted, pt.true_rate, pt.predicted_rate);
      ++result.summary.counts[std::size_t(pt.outcome.region)][std::size_t(pt.outcome.label)];
      result.points.push_back(pt);
    }
  }
  return result;
}

PatientMetrics evaluate_tracks(std::string patient, std::span<const PredictionTrack> tracks,
                               std::size_t max_shift, double period_minutes) {
  PatientMetrics m;
  m.patient = std::move(patient);
  m.rmse = rmse(tracks);
  m.mape = mape(tracks);
  m.tl = time_lag(tracks, max_shift, period_minutes);
  const CgEgaResult cg = cg_ega(tracks, period_minutes);
  m.ap = cg.summary.percent(Label::AP);
  m.be = cg.summary.percent(Label::BE);
  m.ep = cg.summary.percent(Label::EP);
  for (const PredictionTrack& t : tracks) m.points += t.size();
  return m;
}

MetricsReport summarize(std::vector<PatientMetrics> patients) {
  MetricsReport r;
  r.patients = std::move(patients);
  r.mean.patient = "mean";
  r.stddev.patient = "std";
  const std::size_t n = r.patients.size();
  if (n == 0) return r;
  constexpr double PatientMetrics::*fields[] = {&PatientMetrics::rmse, &PatientMetrics::mape,
                                                &PatientMetrics::tl,   &PatientMetrics::ap,
                                                &PatientMetrics::be,   &PatientMetrics::ep};
  for (auto f : fields) {
    double mean = 0.0;
    for (const auto& p : r.patients) mean += p.*f;
    mean /= double(n);
    double ss = 0.0;
    for (const auto& p : r.patients) ss += (p.*f - mean) * (p.*f - mean);
    r.mean.*f = mean;
    r.stddev.*f = n > 1 ? std::sqrt(ss / double(n - 1)) : 0.0;
  }
  for (const auto& p : r.patients) r.mean.points += p.points;
  return r;
}

std::vector<PredictionTrack> make_tracks(std::span<const SampleWindow> windows,
                                         std::span<const double> predictions) {
  if (windows.size() != predictions.size()) {
    throw ShapeError("one prediction per window expected");
  }
  std::vector<PredictionTrack> tracks;
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const SampleWindow& w = windows[k];
    const bool extends = !tracks.empty() && tracks.back().segment == w.segment &&
                         tracks.back().first_index + tracks.back().size() == w.t_index &&
                         windows[k - 1].patient_id == w.patient_id;
    if (!extends) {
      tracks.emplace_back();
      tracks.back().segment = w.segment;
      tracks.back().first_index = w.t_index;
    }
    tracks.back().truth.push_back(w.y);
    tracks.back().predicted.push_back(predictions[k]);
  }
  return tracks;
}

std::vector<double> predict_all(const Model& model, std::span<const SampleWindow> windows) {
  std::vector<double> out;
  out.reserve(windows.size());
  for (const SampleWindow& w : windows) out.push_back(predict(model, w.x));
  return out;
}

MetricsReport evaluate(std::span<const SampleWindow> windows, std::span<const double> predictions,
                       std::size_t max_shift, double period_minutes) {
  if (windows.empty()) throw ContractError("evaluation on an empty test set");
  if (windows.size() != predictions.size()) throw ShapeError("one prediction per window expected");
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<SampleWindow>, std::vector<double>>> groups;
  for (std::size_t k = 0; k < windows.size(); ++k) {
    auto [it, fresh] = groups.try_emplace(windows[k].patient_id);
    if (fresh) order.push_back(windows[k].patient_id);
    it->second.first.push_back(windows[k]);
    it->second.second.push_back(predictions[k]);
  }
  std::vector<PatientMetrics> rows;
  for (const std::string& id : order) {
    const auto& [w, p] = groups[id];
    const auto tracks = make_tracks(w, p);
    rows.push_back(evaluate_tracks(id, tracks, max_shift, period_minutes));
  }
  return summarize(std::move(rows));
}

MetricsReport evaluate(const Model& model, std::span<const SampleWindow> windows) {
  const auto predictions = predict_all(model, windows);
  return evaluate(windows, predictions, dimensions(model).horizon);
}

void write_report_csv(std::ostream& out, const MetricsReport& report) {
  out << "patient,rmse,mape,tl,ap,be,ep\n";
  const auto row = [&out](const PatientMetrics& m) {
    out << m.patient << ',' << format_number(m.rmse) << ',' << format_number(m.mape) << ','
        << format_number(m.tl) << ',' << format_number(m.ap) << ',' << format_number(m.be) << ','
        << format_number(m.ep) << '\n';
  };
  for (const auto& p : report.patients) row(p);
  row(report.mean);
  row(report.stddev);
}

void write_report_json(std::ostream& out, const MetricsReport& report) {
  const auto obj = [](const PatientMetrics& m) {
    return nlohmann::ordered_json{{"patient", m.patient}, {"rmse", m.rmse}, {"mape", m.mape},
                                  {"tl", m.tl},           {"ap", m.ap},     {"be", m.be},
                                  {"ep", m.ep},           {"points", m.points}};
  };
  nlohmann::ordered_json j;
  j["patients"] = nlohmann::ordered_json::array();
  for (const auto& p : report.patients) j["patients"].push_back(obj(p));
  j["mean"] = obj(report.mean);
  j["std"] = obj(report.stddev);
  out << j.dump(2) << '\n';
}

void write_points_csv(std::ostream& out, const std::string& patient, const CgEgaResult& result,
                      bool header) {
  if (header) {
    out << "patient,segment,t_index,truth,predicted,true_rate,predicted_rate,region,p_zone,"
           "r_zone,label\n";
  }
  for (const CgEgaPoint& p : result.points) {
    out << patient << ',' << p.segment << ',' << p.t_index << ',' << format_number(p.truth) << ','
        << format_number(p.predicted) << ',' << format_number(p.true_rate) << ','
        << format_number(p.predicted_rate) << ',' << to_string(p.outcome.region) << ','
        << to_string(p.outcome.p_zone) << ',' << to_string(p.outcome.r_zone) << ','
        << to_string(p.outcome.label) << '\n';
  }
}

}  // namespace retain
