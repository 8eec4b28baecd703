#include "retain/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "retain/errors.hpp"
#include "retain/interpretation.hpp"
#include "retain/metrics.hpp"
#include "retain/model.hpp"
#include "retain/synthetic.hpp"
#include "retain/text.hpp"
#include "retain/training.hpp"

namespace fs = std::filesystem;

namespace retain {

namespace {

struct Common {
  std::string config;
  std::string out = "runs";
  std::string run_name;
};

struct DataOptions {
  std::vector<std::string> paths;
  std::int64_t period = 300;
  std::int64_t max_gap = 1800;

  GridOptions grid() const { return {period, max_gap}; }
};

struct GenerateOptions {
  std::size_t patients = 5;
  std::uint64_t seed = 7;
  SimConfig sim;
};

struct TrainOptions {
  std::string model = "retain";
  ModelDimensions dims;
  TrainConfig train;
  std::size_t stride = 1;
  bool lopo = false;
  double fraction = 0.75;
  std::string grid_embedding, grid_hidden, grid_lr, grid_batch;
  std::size_t grid_folds = 4;
};

struct EvaluateOptions {
  std::string models;
  bool lopo = false;
  bool oracle = false;
  std::size_t history = 36;
  std::size_t horizon = 6;
  int max_shift = -1;
};

struct InterpretOptions {
  std::string models;
  bool lopo = false;
  bool audit = false;
  std::size_t event_window = 12;
};

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write " + path.string());
  return f;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  return f;
}

fs::path make_run_dir(const Common& common, const std::string& command) {
  std::string name = common.run_name;
  if (name.empty()) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    name = command + "-" + stamp;
  }
  const fs::path dir = fs::path(common.out) / name;
  fs::create_directories(dir);
  return dir;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key=value settings file; flags override it");
  sub->add_option("--out", c.out, "parent directory of run directories")->capture_default_str();
  sub->add_option("--run-name", c.run_name, "run directory name (default <command>-<UTC time>)");
}

void add_data(CLI::App* sub, DataOptions& d) {
  sub->add_option("--data", d.paths, "patient CSV files or directories")->required()->delimiter(',');
  sub->add_option("--period", d.period, "grid period in seconds")->capture_default_str();
  sub->add_option("--max-gap", d.max_gap, "longest interpolated glucose gap in seconds")
      ->capture_default_str();
}

template <class T>
std::vector<T> parse_list(const std::string& text, const char* name) {
  std::vector<T> out;
  if (trim(text).empty()) return out;
  for (const std::string& item : split(text, ',')) {
    double v = 0.0;
    if (!parse_double(item, v)) {
      throw ContractError(std::string("bad value '") + item + "' in " + name);
    }
    if constexpr (std::is_integral_v<T>) {
      if (v <= 0.0 || v != std::floor(v)) {
        throw ContractError(std::string(name) + " takes positive integers");
      }
    }
    out.push_back(static_cast<T>(v));
  }
  return out;
}

std::string patient_dir(const std::string& id) { return "fold_" + id; }

void save_bundle(const fs::path& dir, const Model& model, const Standardizer& standardizer) {
  fs::create_directories(dir);
  save_model(dir / "model.rtnw", model);
  auto f = open_out(dir / "standardizer.csv");
  write_standardizer(f, standardizer);
}

std::pair<Model, Standardizer> load_bundle(const fs::path& dir) {
  Model model = load_model(dir / "model.rtnw");
  auto f = open_in(dir / "standardizer.csv");
  return {std::move(model), read_standardizer(f)};
}

void write_grid_csv(const fs::path& path, const GridResult& grid) {
  auto f = open_out(path);
  f << "embedding,hidden,learning_rate,batch_size,rmse,selected\n";
  for (std::size_t k = 0; k < grid.cells.size(); ++k) {
    const auto& c = grid.cells[k];
    f << c.params.embedding << ',' << c.params.hidden << ',' << format_number(c.params.learning_rate)
      << ',' << c.params.batch_size << ',' << format_number(c.score) << ','
      << (k == grid.best ? 1 : 0) << '\n';
  }
}

int cmd_generate(const GenerateOptions& o, const fs::path& run, std::ostream& out) {
  if (o.patients == 0) throw ContractError("--patients must be positive");
  SimConfig base = o.sim;
  base.seed = o.seed;
  base.validate();
  for (std::size_t i = 0; i < o.patients; ++i) {
    const SimConfig c = cohort_member(base, i);
    const fs::path path = run / (c.patient_id + ".csv");
    auto f = open_out(path);
    write_series_csv(f, simulate(c));
    out << "wrote " << path.string() << '\n';
  }
  return kExitOk;
}

int cmd_train(const TrainOptions& o, const DataOptions& d, const fs::path& run, std::ostream& out) {
  const ModelKind kind = parse_model_kind(o.model);
  o.dims.validate();
  o.train.validate();
  Grid grid;
  const auto ge = parse_list<std::size_t>(o.grid_embedding, "--grid-embedding");
  const auto gh = parse_list<std::size_t>(o.grid_hidden, "--grid-hidden");
  const auto gl = parse_list<double>(o.grid_lr, "--grid-lr");
  const auto gb = parse_list<std::size_t>(o.grid_batch, "--grid-batch");
  const bool searching = !ge.empty() || !gh.empty() || !gl.empty() || !gb.empty();
  grid.embedding = ge.empty() ? std::vector{o.dims.embedding} : ge;
  grid.hidden = gh.empty() ? std::vector{o.dims.hidden} : gh;
  grid.learning_rate = gl.empty() ? std::vector{o.train.learning_rate} : gl;
  grid.batch_size = gb.empty() ? std::vector{o.train.batch_size} : gb;

  const auto patients = load_patients(d.paths, d.grid());

  const auto fit = [&](const fs::path& dir, std::span<const PatientSeries> train_part,
                       std::span<const PatientSeries> valid_part,
                       std::span<const PatientSeries> whole) {
    fs::create_directories(dir);
    ModelDimensions dims = o.dims;
    TrainConfig config = o.train;
    if (searching) {
      const auto folds = inner_folds(whole, o.grid_folds);
      const GridResult g = grid_search(kind, grid, folds, dims, config, o.stride);
      write_grid_csv(dir / "grid.csv", g);
      const HyperParameters& best = g.best_cell().params;
      dims.embedding = best.embedding;
      dims.hidden = best.hidden;
      config.learning_rate = best.learning_rate;
      config.batch_size = best.batch_size;
    }
    const PreparedSplit split = prepare_split(train_part, valid_part, dims, o.stride);
    const TrainResult r = train(make_model(kind, dims, config.seed), split.train, split.valid, config);
    save_bundle(dir, r.model, split.standardizer);
    auto f = open_out(dir / "train_report.csv");
    write_train_report_csv(f, r.report);
    out << dir.filename().string() << ": " << to_string(kind) << ", " << split.train.size()
        << " train / " << split.valid.size() << " valid windows, best epoch " << r.report.best_epoch
        << " of " << r.report.stopped_epoch << ", valid RMSE "
        << format_number(std::sqrt(r.report.best_valid_mse), 6) << " mg/dL\n";
  };

  if (o.lopo) {
    for (const OuterFold& fold : split_protocol(patients, o.fraction)) {
      std::vector<PatientSeries> whole;
      for (std::size_t i : fold.train_indices) whole.push_back(patients[i]);
      fit(run / patient_dir(patients[fold.test_index].patient_id), fold.train, fold.valid, whole);
    }
  } else {
    std::vector<PatientSeries> train_part, valid_part;
    for (const PatientSeries& p : patients) {
      auto [t, v] = chronological_split(p, o.fraction);
      train_part.push_back(std::move(t));
      valid_part.push_back(std::move(v));
    }
    fit(run, train_part, valid_part, patients);
  }
  return kExitOk;
}

/// Model, standardizer and raw series of every evaluated patient.
struct Assignment {
  const PatientSeries* patient;
  fs::path bundle;
};

std::vector<Assignment> assignments(const std::vector<PatientSeries>& patients,
                                    const std::string& models, bool lopo) {
  if (models.empty()) throw ContractError("--models is required");
  std::vector<Assignment> out;
  for (const PatientSeries& p : patients) {
    out.push_back({&p, lopo ? fs::path(models) / patient_dir(p.patient_id) : fs::path(models)});
  }
  return out;
}

int cmd_evaluate(const EvaluateOptions& o, const DataOptions& d, const fs::path& run,
                 std::ostream& out) {
  const auto patients = load_patients(d.paths, d.grid());
  const double period_min = double(d.period) / 60.0;
  std::vector<SampleWindow> all;
  std::vector<double> predictions;
  std::size_t horizon = o.horizon;
  if (o.oracle) {
    ModelDimensions dims;
    dims.history = o.history;
    dims.horizon = o.horizon;
    all = make_windows(patients, dims);
    for (const SampleWindow& w : all) predictions.push_back(w.y);
  } else {
    for (const Assignment& a : assignments(patients, o.models, o.lopo)) {
      const auto [model, standardizer] = load_bundle(a.bundle);
      horizon = dimensions(model).horizon;
      auto windows = apply_standardizer(standardizer, make_windows(*a.patient, dimensions(model)));
      const auto p = predict_batched(model, windows);
      predictions.insert(predictions.end(), p.begin(), p.end());
      all.insert(all.end(), std::make_move_iterator(windows.begin()),
                 std::make_move_iterator(windows.end()));
    }
  }
  if (all.empty()) throw ContractError("no test windows (segments shorter than H + PH?)");
  const std::size_t shift = o.max_shift >= 0 ? std::size_t(o.max_shift) : horizon;
  const MetricsReport report = evaluate(all, predictions, shift, period_min);

  auto points = open_out(run / "cgega_points.csv");
  bool header = true;
  for (const PatientMetrics& m : report.patients) {
    std::vector<SampleWindow> mine;
    std::vector<double> preds;
    for (std::size_t k = 0; k < all.size(); ++k) {
      if (all[k].patient_id != m.patient) continue;
      mine.push_back(all[k]);
      preds.push_back(predictions[k]);
    }
    write_points_csv(points, m.patient, cg_ega(make_tracks(mine, preds), period_min), header);
    header = false;
  }
  auto csv = open_out(run / "report.csv");
  write_report_csv(csv, report);
  auto json = open_out(run / "report.json");
  write_report_json(json, report);
  write_report_csv(out, report);
  return kExitOk;
}

int cmd_interpret(const InterpretOptions& o, const DataOptions& d, const fs::path& run,
                  std::ostream& out) {
  const auto patients = load_patients(d.paths, d.grid());
  std::vector<AttributedSample> samples;
  std::size_t history = 0;
  double max_residual = 0.0;
  for (const Assignment& a : assignments(patients, o.models, o.lopo)) {
    const auto [model, standardizer] = load_bundle(a.bundle);
    const auto* retain_model = std::get_if<RetainModel>(&model);
    if (!retain_model) {
      throw ContractError(a.bundle.string() + " holds an LSTM; only RETAIN predictions decompose");
    }
    history = retain_model->dims.history;
    const auto windows =
        apply_standardizer(standardizer, make_windows(*a.patient, retain_model->dims));
    std::vector<double> check;
    if (o.audit) check = predict_batched(model, windows);
    constexpr std::size_t kBatch = 256;
    for (std::size_t begin = 0; begin < windows.size(); begin += kBatch) {
      const std::size_t end = std::min(windows.size(), begin + kBatch);
      std::vector<const Tensor*> xs;
      for (std::size_t k = begin; k < end; ++k) xs.push_back(&windows[k].x);
      const auto traces = retain_forward(retain_model->params, xs);
      for (std::size_t k = begin; k < end; ++k) {
        AttributedSample s;
        s.map = contributions(retain_model->params, traces[k - begin], windows[k].x);
        s.insulin_lag = windows[k].insulin_lag;
        s.cho_lag = windows[k].cho_lag;
        if (o.audit) {
          double total = s.map.bias;
          for (double v : s.map.omega.data()) total += v;
          max_residual = std::max(max_residual,
                                  std::abs(total - check[k]) / std::max(1.0, std::abs(check[k])));
        }
        samples.push_back(std::move(s));
      }
    }
  }
  if (samples.empty()) throw ContractError("no windows to interpret");
  const int period_min = int(d.period / 60);

  const ContributionProfile max_profile = max_contribution_profile(samples);
  const auto insulin = event_conditioned_profiles(samples, EventType::insulin);
  const auto cho = event_conditioned_profiles(samples, EventType::cho);
  const ContributionProfile quiet = no_event_profile(samples, o.event_window);
  {
    auto f = open_out(run / "profile_max.csv");
    write_profile_csv(f, max_profile, history, period_min);
  }
  {
    auto f = open_out(run / "profile_event_insulin.csv");
    write_event_profiles_csv(f, insulin, history, period_min);
  }
  {
    auto f = open_out(run / "profile_event_cho.csv");
    write_event_profiles_csv(f, cho, history, period_min);
  }
  {
    auto f = open_out(run / "profile_no_event.csv");
    write_profile_csv(f, quiet, history, period_min);
  }
  std::size_t degenerate = 0;
  for (const auto& s : samples) degenerate += s.map.degenerate() ? 1 : 0;
  nlohmann::ordered_json meta;
  meta["samples"] = samples.size();
  meta["degenerate_excluded"] = degenerate;
  meta["history"] = history;
  meta["event_window_steps"] = o.event_window;
  meta["no_event_count"] = quiet.count;
  meta["event_grouping"] =
      "latest event of the given type at exactly the listed lag; samples with both event types "
      "in the window count under each type";
  if (o.audit) meta["audit_max_relative_residual"] = max_residual;
  auto f = open_out(run / "interpret_meta.json");
  f << meta.dump(2) << '\n';
  out << samples.size() << " samples decomposed";
  if (o.audit) out << ", max relative residual " << format_number(max_residual, 3);
  out << '\n';
  return kExitOk;
}

}  // namespace

std::vector<std::string> config_arguments(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot read config file " + path.string());
  std::vector<std::string> args;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view body = trim(std::string_view(line).substr(0, line.find('#')));
    if (body.empty()) continue;
    const std::size_t eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ContractError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key(trim(body.substr(0, eq)));
    const std::string value(trim(body.substr(eq + 1)));
    if (key.empty() || key == "config") {
      throw ContractError(path.string() + ":" + std::to_string(line_no) + ": bad key");
    }
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

std::vector<PatientSeries> load_patients(const std::vector<std::string>& paths,
                                         const GridOptions& grid) {
  std::vector<fs::path> files;
  for (const std::string& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(p)) {
        if (entry.is_regular_file() && entry.path().extension() == ".csv") {
          found.push_back(entry.path());
        }
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      files.emplace_back(p);
    } else {
      throw FormatError("data path " + p + " does not exist");
    }
  }
  if (files.empty()) throw FormatError("no patient CSV files found");
  std::vector<PatientSeries> out;
  for (const fs::path& f : files) {
    out.push_back(ingest_csv(f, grid));
    out.back().validate();
  }
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"RETAIN glucose forecasting: generate, train, evaluate, interpret", "retain"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  Common common;
  DataOptions data;
  GenerateOptions gen;
  TrainOptions tr;
  EvaluateOptions ev;
  InterpretOptions in;

  auto* generate = app.add_subcommand("generate", "write simulated patient CSVs");
  add_common(generate, common);
  generate->add_option("--patients", gen.patients)->capture_default_str();
  generate->add_option("--days", gen.sim.days)->capture_default_str();
  generate->add_option("--seed", gen.seed)->capture_default_str();
  generate->add_option("--basal", gen.sim.basal)->capture_default_str();
  generate->add_option("--cho-gain", gen.sim.cho_gain)->capture_default_str();
  generate->add_option("--cho-tau", gen.sim.cho_tau)->capture_default_str();
  generate->add_option("--insulin-gain", gen.sim.insulin_gain)->capture_default_str();
  generate->add_option("--insulin-tau", gen.sim.insulin_tau)->capture_default_str();
  generate->add_option("--noise-std", gen.sim.noise_std)->capture_default_str();
  generate->add_option("--bolus-probability", gen.sim.bolus_probability)->capture_default_str();
  generate->add_option("--corrections-per-day", gen.sim.corrections_per_day)
      ->capture_default_str();

  auto* trn = app.add_subcommand("train", "fit RETAIN or the LSTM baseline");
  add_common(trn, common);
  add_data(trn, data);
  trn->add_option("--model", tr.model, "retain or lstm")->capture_default_str();
  trn->add_option("--history", tr.dims.history)->capture_default_str();
  trn->add_option("--horizon", tr.dims.horizon)->capture_default_str();
  trn->add_option("--embedding", tr.dims.embedding)->capture_default_str();
  trn->add_option("--hidden", tr.dims.hidden)->capture_default_str();
  trn->add_option("--lr", tr.train.learning_rate)->capture_default_str();
  trn->add_option("--batch-size", tr.train.batch_size)->capture_default_str();
  trn->add_option("--patience", tr.train.patience)->capture_default_str();
  trn->add_option("--max-epochs", tr.train.max_epochs)->capture_default_str();
  trn->add_option("--seed", tr.train.seed)->capture_default_str();
  trn->add_option("--window-stride", tr.stride, "keep every n-th training/validation window")
      ->capture_default_str();
  trn->add_option("--train-fraction", tr.fraction)->capture_default_str();
  trn->add_flag("--lopo", tr.lopo, "one model per left-out patient");
  trn->add_option("--grid-embedding", tr.grid_embedding, "comma list");
  trn->add_option("--grid-hidden", tr.grid_hidden, "comma list");
  trn->add_option("--grid-lr", tr.grid_lr, "comma list");
  trn->add_option("--grid-batch", tr.grid_batch, "comma list");
  trn->add_option("--grid-folds", tr.grid_folds)->capture_default_str();

  auto* eval = app.add_subcommand("evaluate", "RMSE, MAPE, TL and CG-EGA reports");
  add_common(eval, common);
  add_data(eval, data);
  eval->add_option("--models", ev.models, "train run directory");
  eval->add_flag("--lopo", ev.lopo, "use fold_<patient> models");
  eval->add_flag("--oracle", ev.oracle, "predict the true value");
  eval->add_option("--history", ev.history, "oracle mode only")->capture_default_str();
  eval->add_option("--horizon", ev.horizon, "oracle mode only")->capture_default_str();
  eval->add_option("--max-shift", ev.max_shift, "time lag search range in steps (default PH)");

  auto* interp = app.add_subcommand("interpret", "contribution profiles of RETAIN predictions");
  add_common(interp, common);
  add_data(interp, data);
  interp->add_option("--models", in.models, "train run directory");
  interp->add_flag("--lopo", in.lopo, "use fold_<patient> models");
  interp->add_flag("--audit", in.audit, "re-check every decomposition against a fresh forward pass");
  interp->add_option("--event-window", in.event_window)->capture_default_str();

  try {
    std::vector<std::string> argv = args;
    // Settings from --config go right after the subcommand so later flags win.
    for (std::size_t k = 1; k < argv.size(); ++k) {
      std::string file;
      if (argv[k] == "--config" && k + 1 < argv.size()) {
        file = argv[k + 1];
      } else if (argv[k].rfind("--config=", 0) == 0) {
        file = argv[k].substr(9);
      }
      if (!file.empty()) {
        const auto extra = config_arguments(file);
        argv.insert(argv.begin() + 1, extra.begin(), extra.end());
        break;
      }
    }
    std::reverse(argv.begin(), argv.end());
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const fs::path run = make_run_dir(common, sub->get_name());
    {
      auto f = open_out(run / "config.txt");
      f << sub->config_to_str(true, false);
    }
    int code = kExitOk;
    if (sub == generate) code = cmd_generate(gen, run, out);
    else if (sub == trn) code = cmd_train(tr, data, run, out);
    else if (sub == eval) code = cmd_evaluate(ev, data, run, out);
    else code = cmd_interpret(in, data, run, out);
    out << "run directory: " << run.string() << '\n';
    return code;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConsistencyError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace retain
