// Acceptance checks AC1-AC9. One line per criterion; nonzero exit if any fails.
// Pass criterion names (e.g. "AC3 AC5") to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cgega_golden.hpp"
#include "gradcheck.hpp"
#include "oracle.hpp"
#include "retain/cli.hpp"
#include "retain/interpretation.hpp"
#include "retain/metrics.hpp"
#include "retain/synthetic.hpp"
#include "retain/training.hpp"

namespace fs = std::filesystem;
using namespace retain;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Attention statistics gathered from every forward pass of AC1-AC3.
struct AttentionAudit {
  std::size_t passes = 0;
  double worst_alpha_sum = 0.0;  // max |sum(alpha) - 1|
  double max_abs_beta = 0.0;

  // one row of alphas per window
  void add(const Tensor& alphas, const Tensor& betas) {
    for (std::size_t r = 0; r < alphas.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < alphas.cols(); ++c) s += alphas.raw()[r * alphas.cols() + c];
      worst_alpha_sum = std::max(worst_alpha_sum, std::abs(s - 1.0));
      ++passes;
    }
    for (double b : betas.data()) max_abs_beta = std::max(max_abs_beta, std::abs(b));
  }
} attention;

ModelDimensions dims(std::size_t h, std::size_t m, std::size_t p) {
  ModelDimensions d;
  d.history = h;
  d.embedding = m;
  d.hidden = p;
  return d;
}

RetainParameters randomized(const ModelDimensions& d, std::uint64_t seed, double jitter) {
  RetainParameters p = init_retain(d, seed);
  std::mt19937_64 rng(seed ^ 0x5eedull);
  std::normal_distribution<double> n(0.0, jitter);
  for_each_tensor([&](Tensor& t) { for (double& v : t.data()) v += n(rng); }, p);
  return p;
}

// Inputs shaped like standardized data: dense glucose, sparse event spikes.
Tensor random_window(std::size_t h, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor x(Shape{h, 3});
  for (std::size_t i = 0; i < h; ++i) {
    x.at(i, 0) = n(rng);
    x.at(i, 1) = u(rng) < 0.05 ? 4.0 + n(rng) : -0.2;
    x.at(i, 2) = u(rng) < 0.05 ? 5.0 + n(rng) : -0.2;
  }
  return x;
}

// AC1 and AC2 share one sweep.
struct DecompositionSweep {
  std::size_t pairs = 0, degenerate = 0;
  double worst_residual = 0.0;
  double worst_an_sum = 0.0;
  double min_an = 0.0;
  double seconds = 0.0;
  bool done = false;
};

DecompositionSweep& decomposition_sweep() {
  static DecompositionSweep s;
  if (s.done) return s;
  const auto t0 = Clock::now();
  const ModelDimensions d = dims(36, 64, 128);
  std::mt19937_64 rng(2024);
  constexpr std::size_t kParamSets = 125, kWindows = 8;
  for (std::size_t ps = 0; ps < kParamSets; ++ps) {
    const RetainParameters p = randomized(d, 1000 + ps, 0.05);
    std::vector<Tensor> xs;
    for (std::size_t k = 0; k < kWindows; ++k) {
      xs.push_back(random_window(36, rng));
      if (ps % 25 == 0 && k == 0) xs.back() = Tensor(Shape{36, 3});  // all-zero window
    }
    std::vector<const Tensor*> ptr;
    for (const Tensor& x : xs) ptr.push_back(&x);
    const auto traces = retain_forward(p, ptr);
    for (std::size_t k = 0; k < kWindows; ++k) {
      attention.add(traces[k].alphas, traces[k].betas);
      const ContributionMap m = contributions(p, traces[k], xs[k]);
      double total = m.bias;
      for (double v : m.omega.data()) total += v;
      const double y = traces[k].prediction;
      s.worst_residual = std::max(s.worst_residual, std::abs(total - y) / std::max(1.0, std::abs(y)));
      ++s.pairs;
      if (!m.omega_an) {
        ++s.degenerate;
        continue;
      }
      double an = 0.0;
      for (double v : m.omega_an->data()) {
        an += v;
        s.min_an = std::min(s.min_an, v);
      }
      s.worst_an_sum = std::max(s.worst_an_sum, std::abs(an - 1.0));
    }
  }
  s.seconds = seconds_since(t0);
  s.done = true;
  return s;
}

Outcome ac1() {
  const DecompositionSweep& s = decomposition_sweep();
  const bool ok = s.pairs >= 1000 && s.worst_residual < 1e-9 && s.seconds < 60.0;
  return {ok, "pairs=" + std::to_string(s.pairs) + " H=36 r=3 m=64 p=128 max_rel_residual=" +
                  num(s.worst_residual) + " (tol 1e-9) runtime=" + num(s.seconds) + "s (limit 60s)"};
}

Outcome ac2() {
  const DecompositionSweep& s = decomposition_sweep();
  const bool ok = s.pairs > s.degenerate && s.worst_an_sum <= 1e-9 && s.min_an >= 0.0;
  return {ok, "non_degenerate=" + std::to_string(s.pairs - s.degenerate) +
                  " degenerate_flagged=" + std::to_string(s.degenerate) +
                  " max|sum-1|=" + num(s.worst_an_sum) + " (tol 1e-9) min_entry=" + num(s.min_an)};
}

Outcome gradient_sweep() {
  const auto t0 = Clock::now();
  const ModelDimensions d = dims(4, 2, 3);
  std::mt19937_64 rng(77);
  double worst = 0.0;
  constexpr std::size_t kInstances = 25;
  for (std::size_t inst = 0; inst < kInstances; ++inst) {
    RetainParameters p = init_retain(d, inst + 1);
    for_each_tensor([&](Tensor& t) { t = oracle::random_tensor(t.shape(), rng, 0.7); }, p);
    const std::size_t batch = 1 + inst % 3;
    std::vector<Tensor> xs;
    for (std::size_t b = 0; b < batch; ++b) xs.push_back(oracle::random_tensor({4, 3}, rng));
    const Tensor y = oracle::random_tensor({batch, 1}, rng, 2.0);
    std::vector<Tensor> inputs;
    for_each_tensor([&](const Tensor& t) { inputs.push_back(t); }, p);
    const auto build = [&](Tape& t, const std::vector<Var>& v) {
      RetainWeights<Var> w;
      std::size_t k = 0;
      for_each_tensor([&](Var& slot) { slot = v[k++]; }, w);
      std::vector<const Tensor*> ptr;
      for (const Tensor& x : xs) ptr.push_back(&x);
      const RetainBatch out = retain_forward(w, stack_steps(t, ptr), batch);
      attention.add(out.alphas.value(), out.betas.value());
      return mse(out.prediction, t.constant(y));
    };
    worst = std::max(worst, gradcheck::worst_error(build, inputs));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 60.0,
          "instances=" + std::to_string(kInstances) + " H=4 m=2 p=3 max_rel_error=" + num(worst) +
              " (tol 1e-6) runtime=" + num(secs) + "s (limit 60s)"};
}

Outcome ac3() {
  static const Outcome o = gradient_sweep();
  return o;
}

Outcome ac4() {
  decomposition_sweep();
  ac3();
  const bool ok = attention.worst_alpha_sum <= 1e-9 && attention.max_abs_beta < 1.0;
  return {ok, "forward_passes=" + std::to_string(attention.passes) + " max|sum(alpha)-1|=" +
                  num(attention.worst_alpha_sum) + " (tol 1e-9) max|beta|=" +
                  num(attention.max_abs_beta) + " (< 1)"};
}

double wave(double t) { return 120.0 + 35.0 * std::sin(t / 9.0) + 12.0 * std::sin(t / 4.3 + 1.0) + 0.2 * t; }

Outcome ac5() {
  std::vector<std::string> failures;
  const std::vector<double> truth{100, 100}, pred{103, 96};
  if (std::abs(rmse(truth, pred) - std::sqrt(12.5)) > 1e-12) failures.push_back("rmse");
  if (std::abs(mape(truth, pred) - 3.5) > 1e-12) failures.push_back("mape");
  if (rmse(truth, truth) != 0.0 || mape(truth, truth) != 0.0) failures.push_back("perfect");

  for (std::size_t s : {0u, 1u, 3u, 6u}) {
    PredictionTrack t;
    for (int i = 0; i < 288; ++i) {
      t.truth.push_back(wave(i));
      t.predicted.push_back(wave(double(i) - double(s)));
    }
    const PredictionTrack tracks[] = {t};
    if (time_lag(tracks, 6) != 5.0 * double(s)) failures.push_back("tl" + std::to_string(5 * s));
  }

  std::size_t agree = 0;
  for (const golden::Point& g : golden::points) {
    const CgEgaOutcome o = classify(g.truth, g.predicted, g.true_rate, g.predicted_rate);
    agree += o.p_zone == g.p && o.r_zone == g.r && o.region == g.region && o.label == g.label;
  }
  const std::size_t n = std::size(golden::points);
  if (agree != n || n < 30) failures.push_back("golden");

  PredictionTrack noisy;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> e(0.0, 25.0);
  for (int i = 0; i < 2000; ++i) {
    noisy.truth.push_back(std::max(45.0, wave(i * 2.0) + 40.0 * std::sin(i / 50.0)));
    noisy.predicted.push_back(std::max(40.0, noisy.truth.back() + e(rng)));
  }
  const PredictionTrack tracks[] = {noisy};
  const CgEgaSummary sum = cg_ega(tracks).summary;
  const double total = sum.percent(Label::AP) + sum.percent(Label::BE) + sum.percent(Label::EP);
  if (std::abs(total - 100.0) > 1e-9) failures.push_back("partition");

  std::string detail = "rmse/mape hand examples (tol 1e-12), tl shifts 0/5/15/30 min, golden " +
                       std::to_string(agree) + "/" + std::to_string(n) + ", AP+BE+EP=" +
                       num(total);
  for (const auto& f : failures) detail += " FAILED:" + f;
  return {failures.empty(), detail};
}

// AC6 and AC7 share the leave-one-patient-out models.
struct LopoRun {
  std::vector<std::string> patients;
  std::vector<double> retain_rmse, lstm_rmse;
  std::vector<AttributedSample> samples;  // RETAIN decompositions of every test window
  std::size_t history = 0;
  double seconds = 0.0;
  bool done = false;
};

LopoRun& lopo_run() {
  static LopoRun r;
  if (r.done) return r;
  const auto t0 = Clock::now();
  SimConfig base;
  base.seed = 7;
  base.days = 31;
  std::vector<PatientSeries> cohort;
  for (std::size_t i = 0; i < 5; ++i) cohort.push_back(simulate(cohort_member(base, i)));

  ModelDimensions d = dims(36, 16, 32);
  d.horizon = 6;
  r.history = d.history;
  TrainConfig config;
  config.patience = 10;
  config.max_epochs = 150;
  config.seed = 1;
  constexpr std::size_t kStride = 3;

  for (const OuterFold& fold : split_protocol(cohort, 0.75)) {
    const PatientSeries& test = cohort[fold.test_index];
    r.patients.push_back(test.patient_id);
    const PreparedSplit split = prepare_split(fold.train, fold.valid, d, kStride);
    const auto windows = apply_standardizer(split.standardizer, make_windows(test, d));
    for (ModelKind kind : {ModelKind::retain, ModelKind::lstm}) {
      const auto tk = Clock::now();
      const TrainResult t = train(make_model(kind, d, config.seed), split.train, split.valid, config);
      const auto pred = predict_batched(t.model, windows);
      const auto report = evaluate(windows, pred, d.horizon);
      (kind == ModelKind::retain ? r.retain_rmse : r.lstm_rmse).push_back(report.patients.at(0).rmse);
      std::cerr << "  [AC6] " << test.patient_id << " " << to_string(kind) << ": rmse "
                << num(report.patients.at(0).rmse) << ", best epoch " << t.report.best_epoch
                << "/" << t.report.stopped_epoch << ", " << num(seconds_since(tk)) << "s\n";
      if (kind != ModelKind::retain) continue;
      const auto& params = std::get<RetainModel>(t.model).params;
      for (std::size_t begin = 0; begin < windows.size(); begin += 256) {
        const std::size_t end = std::min(windows.size(), begin + 256);
        std::vector<const Tensor*> xs;
        for (std::size_t k = begin; k < end; ++k) xs.push_back(&windows[k].x);
        const auto traces = retain_forward(params, xs);
        for (std::size_t k = begin; k < end; ++k) {
          AttributedSample s;
          s.map = contributions(params, traces[k - begin], windows[k].x);
          s.insulin_lag = windows[k].insulin_lag;
          s.cho_lag = windows[k].cho_lag;
          r.samples.push_back(std::move(s));
        }
      }
    }
  }
  r.seconds = seconds_since(t0);
  r.done = true;
  return r;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

Outcome ac6() {
  const LopoRun& r = lopo_run();
  const double a = mean(r.retain_rmse), b = mean(r.lstm_rmse);
  const double gap = std::abs(a - b) / b;
  return {gap <= 0.10, "LOPO 5 patients x 31 days: RETAIN rmse=" + num(a) + " LSTM rmse=" + num(b) +
                           " mg/dL, relative gap=" + num(100.0 * gap) +
                           "% (limit 10%) runtime=" + num(r.seconds) + "s (target 1800s)"};
}

Outcome ac7() {
  const LopoRun& r = lopo_run();
  const ContributionProfile prof = max_contribution_profile(r.samples);
  const std::size_t h = r.history;
  const std::size_t last = h - 1;
  std::string detail;
  bool ok = true;
  // row i sits (h - 1 - i) * 5 minutes before prediction time
  for (std::size_t col : {1u, 2u}) {
    double old = 0.0;
    for (std::size_t i = 0; i < h; ++i) {
      if ((h - 1 - i) * 5 > 60) old = std::max(old, prof.values.at(i, col));
    }
    const double lag0 = prof.values.at(last, col);
    const double ratio = lag0 > 0.0 ? old / lag0 : INFINITY;
    ok = ok && ratio < 0.2;
    detail += std::string(col == 1 ? "insulin" : "cho") + " max(lag>60min)/lag0=" + num(ratio) + " ";
  }
  return {ok, detail + "(limit 0.2) samples=" + std::to_string(prof.count)};
}

Outcome ac8() {
  return {true,
          "documentation only: published Table 1-2 values (RETAIN RMSE 17.60, MAPE 8.58, TL 12.14; "
          "AP 85.54, BE 11.56, EP 2.90) need the private dataset and are not reproduced"};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Outcome ac9() {
  const fs::path root = fs::path(RETAIN_TEST_TMP) / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  std::ostringstream sink;
  const auto run = [&](std::vector<std::string> args, const std::string& name) {
    args.insert(args.end(), {"--out", root.string(), "--run-name", name});
    return run_cli(args, sink, sink);
  };
  const std::string data = (root / "data_a").string();
  const std::vector<std::vector<std::string>> commands = {
      {"generate", "--patients", "3", "--days", "4", "--seed", "11"},
      {"train", "--data", data, "--history", "12", "--horizon", "6", "--embedding", "8", "--hidden",
       "8", "--max-epochs", "4", "--patience", "2", "--window-stride", "2", "--seed", "3"},
      {"train", "--data", data, "--model", "lstm", "--history", "12", "--horizon", "6",
       "--embedding", "8", "--hidden", "8", "--max-epochs", "4", "--patience", "2", "--seed", "3"},
      {"evaluate", "--data", data, "--models", (root / "train_a").string()},
      {"interpret", "--data", data, "--models", (root / "train_a").string()},
  };
  const char* names[] = {"data", "train", "lstm", "eval", "interp"};
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (std::size_t c = 0; c < commands.size(); ++c) {
    for (const char* suffix : {"_a", "_b"}) {
      if (run(commands[c], names[c] + std::string(suffix)) != 0) {
        return {false, std::string("command failed: ") + names[c]};
      }
    }
    const fs::path a = root / (names[c] + std::string("_a"));
    const fs::path b = root / (names[c] + std::string("_b"));
    for (const auto& e : fs::directory_iterator(a)) {
      const std::string ext = e.path().extension().string();
      if (ext != ".csv" && ext != ".rtnw") continue;
      ++compared;
      if (slurp(e.path()) != slurp(b / e.path().filename())) differing.push_back(e.path().filename().string());
    }
  }
  std::string detail = "generate/train/evaluate/interpret run twice, " + std::to_string(compared) +
                       " output files compared byte for byte";
  for (const auto& f : differing) detail += " DIFFERS:" + f;
  return {differing.empty() && compared > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4}, {"AC5", ac5},
      {"AC6", ac6}, {"AC7", ac7}, {"AC8", ac8}, {"AC9", ac9},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  bool all_ok = true;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all_ok = all_ok && o.pass;
    std::cout << name << ' ' << (o.pass ? "PASS" : "FAIL") << ' ' << o.detail << std::endl;
  }
  return all_ok ? 0 : 1;
}
