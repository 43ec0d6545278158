#include "sbthermo/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>

#include "sbthermo/dataset.hpp"
#include "sbthermo/detail/binary_io.hpp"
#include "sbthermo/detail/csv.hpp"
#include "sbthermo/evaluation.hpp"
#include "sbthermo/mlp.hpp"

namespace sbthermo::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::string stage = "configuration";
};

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::vector<std::string> keys;
  std::vector<std::function<void(json&)>> setters;
  std::string config_path;
  std::function<json(const Profile&)> defaults;
  std::function<void(const json&, Context&)> body;

  template <typename T>
  CLI::Option* option(const std::string& flags, const std::string& key, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flags, *value, help);
    setters.push_back([opt, value, key](json& j) {
      if (opt->count() > 0) j[key] = *value;
    });
    keys.push_back(key);
    return opt;
  }

  void flag(const std::string& flags, const std::string& key, const std::string& help) {
    auto value = std::make_shared<bool>(false);
    CLI::Option* opt = app->add_flag(flags, *value, help);
    setters.push_back([opt, value, key](json& j) {
      if (opt->count() > 0) j[key] = *value;
    });
    keys.push_back(key);
  }
};

template <typename T>
T get(const json& cfg, const std::string& key) {
  const auto it = cfg.find(key);
  if (it == cfg.end() || it->is_null())
    fail(ErrorCode::kInvalidInput, "missing required parameter '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::kInvalidInput, "parameter '" + key + "' has the wrong type: " + it->dump());
  }
}

std::optional<fs::path> get_path(const json& cfg, const std::string& key) {
  const auto it = cfg.find(key);
  if (it == cfg.end() || it->is_null()) return std::nullopt;
  return fs::path(get<std::string>(cfg, key));
}

fs::path require_path(const json& cfg, const std::string& key) {
  auto p = get_path(cfg, key);
  if (!p) fail(ErrorCode::kInvalidInput, "missing required parameter '" + key + "'");
  return *p;
}

// Refuses outputs that would clobber an input or each other.
void check_paths(const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  auto same = [](const fs::path& a, const fs::path& b) {
    std::error_code ec;
    return fs::weakly_canonical(a, ec) == fs::weakly_canonical(b, ec);
  };
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    for (const auto& in : inputs)
      if (same(outputs[i], in))
        fail(ErrorCode::kInvalidInput, "output " + outputs[i].string() + " would overwrite an input");
    for (std::size_t j = 0; j < i; ++j)
      if (same(outputs[i], outputs[j]))
        fail(ErrorCode::kInvalidInput, "output path " + outputs[i].string() + " used twice");
  }
}

fs::path sidecar(const fs::path& p) { return fs::path(p.string() + ".json"); }

json provenance(const std::string& command, const json& cfg) {
  return {{"command", command}, {"config", cfg}, {"versions", versions()}};
}

void write_json(const fs::path& path, const json& j) {
  detail::write_file_atomic(path, j.dump(2) + "\n");
}

json box_defaults() {
  const dataset::ParamBox b;
  return {{"nbar_min", b.nbar_min},   {"nbar_max", b.nbar_max},
          {"eta_min", b.eta_min},     {"eta_max", b.eta_max},
          {"omega_t_min", b.omega_t_min}, {"omega_t_max", b.omega_t_max}};
}

dataset::ParamBox box_from(const json& cfg) {
  dataset::ParamBox b;
  b.nbar_min = get<double>(cfg, "nbar_min");
  b.nbar_max = get<double>(cfg, "nbar_max");
  b.eta_min = get<double>(cfg, "eta_min");
  b.eta_max = get<double>(cfg, "eta_max");
  b.omega_t_min = get<double>(cfg, "omega_t_min");
  b.omega_t_max = get<double>(cfg, "omega_t_max");
  b.sideband_count = get<int>(cfg, "sideband_count");
  b.validate();
  return b;
}

void add_box_options(Command& c) {
  c.option<double>("--nbar-min", "nbar_min", "Smallest mean phonon number");
  c.option<double>("--nbar-max", "nbar_max", "Largest mean phonon number");
  c.option<double>("--eta-min", "eta_min", "Smallest Lamb-Dicke parameter");
  c.option<double>("--eta-max", "eta_max", "Largest Lamb-Dicke parameter");
  c.option<double>("--omega-t-min", "omega_t_min", "Smallest pulse area (rad)");
  c.option<double>("--omega-t-max", "omega_t_max", "Largest pulse area (rad)");
}

dataset::Dataset load_dataset(const fs::path& path, Context& ctx) {
  ctx.stage = "read dataset " + path.string();
  return dataset::read_binary(path);
}

nn::MlpModel load(const fs::path& path, Context& ctx) {
  ctx.stage = "read model " + path.string();
  return nn::load_model(path);
}

// Drops trailing sidebands when allowed so one test set serves several Q.
dataset::Dataset fit_to_model(dataset::Dataset data, int q, bool truncate) {
  if (data.sideband_count() == q) return data;
  if (truncate && data.sideband_count() > q) return data.truncated(q);
  fail(ErrorCode::kQMismatch, "dataset has Q=" + std::to_string(data.sideband_count()) +
                                  ", model expects Q=" + std::to_string(q) +
                                  (data.sideband_count() > q ? " (use --truncate)" : ""));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---- commands -------------------------------------------------------------

void generate(const json& cfg, Context& ctx, dataset::Mode mode, const std::string& name) {
  dataset::GenerateOptions o;
  o.box = box_from(cfg);
  o.count = get<std::uint64_t>(cfg, "count");
  o.seed = get<std::uint64_t>(cfg, "seed");
  o.mode = mode;
  o.tail_epsilon = get<double>(cfg, "tail_epsilon");
  o.workers = get<unsigned>(cfg, "workers");
  const fs::path out = require_path(cfg, "out");
  const auto csv = get_path(cfg, "csv");
  std::vector<fs::path> outs{out, sidecar(out)};
  if (csv) outs.push_back(*csv);
  check_paths({}, outs);

  ctx.stage = "generate";
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = dataset::generate_dataset(o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  ctx.stage = "write " + out.string();
  dataset::write_binary(data, out);
  auto meta = provenance(name, cfg);
  meta["header"] = eval::to_json(data.header());
  write_json(sidecar(out), meta);
  if (csv) dataset::write_csv(data, *csv);
  ctx.out << "wrote " << data.size() << " " << dataset::to_string(mode) << " records (Q="
          << data.sideband_count() << ") to " << out.string() << " in " << fmt(secs) << " s\n";
}

void noise(const json& cfg, Context& ctx) {
  const fs::path in = require_path(cfg, "in");
  const fs::path out = require_path(cfg, "out");
  check_paths({in}, {out, sidecar(out)});
  const auto trials = get<std::uint32_t>(cfg, "noise_trials");
  const auto clean = load_dataset(in, ctx);
  if (clean.header().noisy)
    fail(ErrorCode::kInvalidInput, in.string() + " already carries projection noise");
  ctx.stage = "apply noise";
  const auto noisy = dataset::apply_projection_noise(clean, trials, get<std::uint64_t>(cfg, "seed"),
                                                     get<unsigned>(cfg, "workers"));
  ctx.stage = "write " + out.string();
  dataset::write_binary(noisy, out);
  auto meta = provenance("noise", cfg);
  meta["header"] = eval::to_json(noisy.header());
  write_json(sidecar(out), meta);
  ctx.out << "wrote " << noisy.size() << " records with N=" << trials << " readout noise to "
          << out.string() << "\n";
}

void train(const json& cfg, Context& ctx) {
  const fs::path data_path = require_path(cfg, "data");
  const fs::path out = require_path(cfg, "out");
  check_paths({data_path}, {out, sidecar(out)});
  const int q = get<int>(cfg, "sideband_count");
  auto data = fit_to_model(load_dataset(data_path, ctx), q, true);

  ctx.stage = "initialize model";
  nn::Architecture arch;
  arch.sideband_count = q;
  arch.hidden_width = get<int>(cfg, "hidden_width");
  arch.hidden.clear();
  for (const auto& a : get<std::vector<std::string>>(cfg, "activations"))
    arch.hidden.push_back(nn::activation_from_string(a));
  const auto seed = get<std::uint64_t>(cfg, "seed");
  auto model = nn::init_model(arch, seed);

  nn::TrainConfig tc;
  tc.epochs = get<int>(cfg, "epochs");
  tc.batch_size = get<int>(cfg, "batch_size");
  tc.adam.learning_rate = get<double>(cfg, "learning_rate");
  tc.schedule = nn::schedule_from_string(get<std::string>(cfg, "schedule"));
  tc.final_lr_fraction = get<double>(cfg, "final_lr_fraction");
  tc.seed = seed;
  tc.noise_trials = get<std::uint32_t>(cfg, "noise_trials");
  tc.holdout_fraction = get<double>(cfg, "holdout_fraction");
  tc.workers = get<unsigned>(cfg, "workers");
  tc.on_epoch = [&](const nn::EpochStats& s) {
    ctx.err << "epoch " << s.epoch << "/" << tc.epochs << "  loss " << fmt(s.train_loss);
    if (!std::isnan(s.holdout_loss)) ctx.err << "  holdout " << fmt(s.holdout_loss);
    ctx.err << "  lr " << fmt(s.learning_rate) << "  " << fmt(s.seconds) << " s" << std::endl;
  };
  json echo = provenance("train", cfg);
  echo["data"] = eval::to_json(data.header());
  model.metadata().config_json = echo.dump();

  ctx.stage = "train";
  const auto result = nn::train(model, data, tc);

  ctx.stage = "write " + out.string();
  nn::save_model(model, out);
  echo["loss_history"] = result.loss_history;
  echo["holdout_history"] = result.holdout_history;
  echo["parameters"] = model.parameter_count();
  write_json(sidecar(out), echo);
  ctx.out << "trained Q=" << q << " width " << arch.hidden_width << " for " << tc.epochs
          << " epochs, final loss " << fmt(model.metadata().final_loss) << ", saved to "
          << out.string() << "\n";
}

void evaluate(const json& cfg, Context& ctx) {
  const fs::path model_path = require_path(cfg, "model");
  const fs::path data_path = require_path(cfg, "data");
  const auto out = get_path(cfg, "out");
  const auto bins_csv = get_path(cfg, "bins_csv");
  std::vector<fs::path> outs;
  if (out) outs.push_back(*out);
  if (bins_csv) outs.push_back(*bins_csv);
  check_paths({model_path, data_path}, outs);

  const auto model = load(model_path, ctx);
  const auto data =
      fit_to_model(load_dataset(data_path, ctx), model.sideband_count(), get<bool>(cfg, "truncate"));
  eval::EvalOptions o;
  o.bins = get<int>(cfg, "bins");
  o.workers = get<unsigned>(cfg, "workers");
  ctx.stage = "evaluate";
  const auto report = eval::evaluate_model(eval::MlpEstimator(model, model_path.string()), data, o);

  ctx.stage = "write report";
  auto j = provenance("eval", cfg);
  j["report"] = eval::to_json(report);
  if (out) write_json(*out, j);
  if (bins_csv) eval::write_bins_csv(report, *bins_csv);
  ctx.out << "records " << report.count << "  mean rel. error " << fmt(report.mean_rel_error)
          << "  window [" << report.window_lo << ", " << report.window_hi << "] "
          << fmt(report.window_mean_rel_error) << " (" << report.window_count << ")"
          << "  mean |d omega_t| " << fmt(report.mean_abs_omega_t_error) << "\n";
}

void sweep(const json& cfg, Context& ctx) {
  const fs::path model_path = require_path(cfg, "model");
  const fs::path data_path = require_path(cfg, "data");
  const auto out = get_path(cfg, "out");
  const auto csv = get_path(cfg, "csv");
  std::vector<fs::path> outs;
  if (out) outs.push_back(*out);
  if (csv) outs.push_back(*csv);
  check_paths({model_path, data_path}, outs);

  const auto model = load(model_path, ctx);
  const auto data =
      fit_to_model(load_dataset(data_path, ctx), model.sideband_count(), get<bool>(cfg, "truncate"));
  eval::EvalOptions o;
  o.workers = get<unsigned>(cfg, "workers");
  ctx.stage = "noise sweep";
  const auto points =
      eval::noise_sweep(eval::MlpEstimator(model, model_path.string()), data,
                        get<std::vector<std::uint32_t>>(cfg, "trials"), get<std::uint64_t>(cfg, "seed"), o);
  ctx.stage = "write report";
  auto j = provenance("noise-sweep", cfg);
  j["sweep"] = eval::to_json(points);
  if (out) write_json(*out, j);
  if (csv) eval::write_sweep_csv(points, *csv);
  for (const auto& p : points)
    ctx.out << "N=" << (p.trials ? std::to_string(p.trials) : std::string("clean"))
            << "  mean rel. error " << fmt(p.report.mean_rel_error) << " +- "
            << fmt(p.report.rel_error_sem) << "\n";
}

void infer(const json& cfg, Context& ctx) {
  const fs::path model_path = require_path(cfg, "model");
  const auto out = get_path(cfg, "out");
  if (out) check_paths({model_path}, {*out});
  const auto model = load(model_path, ctx);
  const auto eta = get<double>(cfg, "eta");
  const auto pops = get<std::vector<double>>(cfg, "populations");
  ctx.stage = "predict";
  const auto e = nn::predict(model, eta, pops);
  json j = provenance("infer", cfg);
  j["estimate"] = {{"nbar", e.nbar}, {"omega_t", e.omega_t}, {"clamped", e.clamped}};
  const auto sig_it = cfg.find("sigmas");
  if (sig_it != cfg.end() && !sig_it->is_null()) {
    auto sigmas = get<std::vector<double>>(cfg, "sigmas");
    if (sigmas.size() == 1) sigmas.assign(pops.size(), sigmas.front());
    ctx.stage = "Monte-Carlo error bar";
    const auto mc = eval::monte_carlo_errorbar(
        eval::MlpEstimator(model), eta, pops, sigmas, get<std::size_t>(cfg, "draws"),
        get<std::uint64_t>(cfg, "seed"), get<unsigned>(cfg, "workers"));
    j["monte_carlo"] = eval::to_json(mc);
  }
  ctx.stage = "write result";
  if (out) write_json(*out, j);
  ctx.out << j.dump(2) << "\n";
}

void peak_fit(const json& cfg, Context& ctx) {
  const fs::path in = require_path(cfg, "in");
  const auto out = get_path(cfg, "out");
  if (out) check_paths({in}, {*out});
  ctx.stage = "read scan trace " + in.string();
  const auto trace = eval::read_scan_trace(in);
  eval::PeakFitOptions o;
  o.max_iterations = get<int>(cfg, "max_iterations");
  o.gradient_tolerance = get<double>(cfg, "gradient_tolerance");
  ctx.stage = "Gaussian fit";
  const auto fit = eval::gaussian_peak_fit(trace, o);
  json j = provenance("peak-fit", cfg);
  j["fit"] = eval::to_json(fit);
  ctx.stage = "write result";
  if (out) write_json(*out, j);
  ctx.out << j["fit"].dump(2) << "\n";
}

void heat_fit(const json& cfg, Context& ctx) {
  const fs::path in = require_path(cfg, "in");
  const auto out = get_path(cfg, "out");
  if (out) check_paths({in}, {*out});
  ctx.stage = "read heating points " + in.string();
  const auto pts = eval::read_heating_points(in);
  ctx.stage = "line fit";
  const auto line = eval::fit_heating_rate(pts);
  json j = provenance("heat-fit", cfg);
  j["line"] = eval::to_json(line);
  ctx.stage = "write result";
  if (out) write_json(*out, j);
  ctx.out << j["line"].dump(2) << "\n";
}

eval::HeatingLine line_from(const json& cfg, Context& ctx) {
  if (const auto path = get_path(cfg, "line")) {
    ctx.stage = "read heating line " + path->string();
    json j;
    try {
      j = json::parse(detail::read_file(*path));
    } catch (const json::exception& e) {
      fail(ErrorCode::kFormat, path->string() + ": " + e.what());
    }
    const json& l = j.contains("line") ? j["line"] : j;
    eval::HeatingLine line;
    try {
      line.rate = l.at("rate_per_ms").get<double>();
      line.intercept = l.at("intercept").get<double>();
      line.rate_se = l.value("rate_se", 0.0);
      line.intercept_se = l.value("intercept_se", 0.0);
    } catch (const json::exception& e) {
      fail(ErrorCode::kFormat, path->string() + ": " + e.what());
    }
    return line;
  }
  return {get<double>(cfg, "rate"), get<double>(cfg, "intercept"), 0.0, 0.0};
}

void verify_line(const json& cfg, Context& ctx) {
  const fs::path model_path = require_path(cfg, "model");
  const auto out = get_path(cfg, "out");
  std::vector<fs::path> ins{model_path};
  if (const auto l = get_path(cfg, "line")) ins.push_back(*l);
  if (out) check_paths(ins, {*out});
  const auto line = line_from(cfg, ctx);
  const auto model = load(model_path, ctx);
  eval::LineCheckOptions o;
  o.eta = get<double>(cfg, "eta");
  o.omega_t = get<double>(cfg, "omega_t");
  o.noise_trials = get<std::uint32_t>(cfg, "noise_trials");
  o.seed = get<std::uint64_t>(cfg, "seed");
  o.tail_epsilon = get<double>(cfg, "tail_epsilon");
  ctx.stage = "compare with heating line";
  const auto rows = eval::verify_against_heating_line(
      eval::MlpEstimator(model), line, get<std::vector<double>>(cfg, "durations"), o);
  ctx.stage = "write table";
  if (out) {
    eval::write_line_check_csv(rows, *out);
    write_json(sidecar(*out), provenance("verify-line", cfg));
  }
  double worst = 0.0;
  for (const auto& r : rows) {
    worst = std::max(worst, r.rel_deviation);
    ctx.out << "t=" << fmt(r.duration_ms) << " ms  line " << fmt(r.nbar_line) << "  estimate "
            << fmt(r.nbar_estimate) << "  rel. dev " << fmt(r.rel_deviation)
            << (r.clamped ? "  (clamped)" : "") << "\n";
  }
  ctx.out << "max rel. deviation " << fmt(worst) << "\n";
}

// ---- wiring ---------------------------------------------------------------

void add_common(Command& c, bool with_workers) {
  c.app->add_option("--config", c.config_path, "JSON config file (flags take precedence)");
  c.option<std::string>("--profile", "profile", "Parameter profile: fast or full");
  c.option<std::uint64_t>("--seed", "seed", "Random seed");
  if (with_workers) c.option<unsigned>("--workers", "workers", "Worker threads (0 = all cores)");
}

json generate_defaults(const Profile& p, bool test) {
  json d = box_defaults();
  d.update({{"count", test ? p.test_count : p.train_count},
            {"seed", test ? 2 : 1},
            {"sideband_count", p.sideband_count},
            {"tail_epsilon", p.tail_epsilon},
            {"workers", 0},
            {"out", nullptr},
            {"csv", nullptr}});
  return d;
}

std::vector<std::unique_ptr<Command>> build(CLI::App& app) {
  std::vector<std::unique_ptr<Command>> cmds;
  auto make = [&](const std::string& name, const std::string& help) -> Command& {
    cmds.push_back(std::make_unique<Command>());
    Command& c = *cmds.back();
    c.name = name;
    c.app = app.add_subcommand(name, help);
    return c;
  };

  for (bool test : {false, true}) {
    auto& c = make(test ? "gen-test" : "gen-data",
                   test ? "Generate a test set (real-valued nbar)"
                        : "Generate a training set (integer nbar)");
    add_common(c, true);
    c.option<std::uint64_t>("-n,--count", "count", "Number of records");
    c.option<int>("-q,--sidebands", "sideband_count", "Number of sideband orders Q");
    c.option<double>("--tail-epsilon", "tail_epsilon", "Untruncated thermal tail mass");
    add_box_options(c);
    c.option<std::string>("-o,--out", "out", "Output dataset file");
    c.option<std::string>("--csv", "csv", "Also write the records as CSV");
    c.defaults = [test](const Profile& p) { return generate_defaults(p, test); };
    const auto mode = test ? dataset::Mode::kTest : dataset::Mode::kTrain;
    c.body = [mode, name = c.name](const json& cfg, Context& ctx) { generate(cfg, ctx, mode, name); };
  }
  {
    auto& c = make("noise", "Apply binomial readout noise to a dataset");
    add_common(c, true);
    c.option<std::string>("-i,--in", "in", "Clean dataset");
    c.option<std::string>("-o,--out", "out", "Noisy dataset");
    c.option<std::uint32_t>("-N,--trials", "noise_trials", "Measurements per population");
    c.defaults = [](const Profile&) {
      return json{{"in", nullptr}, {"out", nullptr}, {"noise_trials", nullptr}, {"seed", 3}, {"workers", 0}};
    };
    c.body = noise;
  }
  {
    auto& c = make("train", "Train a model on a dataset");
    add_common(c, true);
    c.option<std::string>("-d,--data", "data", "Training dataset");
    c.option<std::string>("-o,--out", "out", "Output model file");
    c.option<int>("-q,--sidebands", "sideband_count", "Q used by the model (data is truncated)");
    c.option<int>("--width", "hidden_width", "Hidden layer width");
    c.option<std::vector<std::string>>("--activations", "activations",
                                       "Hidden activations (tanh, relu, linear)")
        ->delimiter(',');
    c.option<int>("--epochs", "epochs", "Training epochs");
    c.option<int>("--batch-size", "batch_size", "Minibatch size");
    c.option<double>("--lr", "learning_rate", "Adam learning rate");
    c.option<std::string>("--schedule", "schedule", "Learning-rate schedule: constant or cosine");
    c.option<double>("--final-lr-fraction", "final_lr_fraction", "Cosine floor as a fraction of --lr");
    c.option<std::uint32_t>("-N,--noise-trials", "noise_trials",
                            "Fresh binomial readout noise each epoch (0 = clean)");
    c.option<double>("--holdout", "holdout_fraction", "Fraction of records held out");
    c.defaults = [](const Profile& p) {
      return json{{"data", nullptr},
                  {"out", nullptr},
                  {"seed", 4},
                  {"workers", 1},
                  {"sideband_count", p.sideband_count},
                  {"hidden_width", p.hidden_width},
                  {"activations", {"tanh", "tanh", "relu"}},
                  {"epochs", p.epochs},
                  {"batch_size", p.batch_size},
                  {"learning_rate", p.learning_rate},
                  {"schedule", nn::to_string(p.schedule)},
                  {"final_lr_fraction", 0.01},
                  {"noise_trials", 0},
                  {"holdout_fraction", 0.0}};
    };
    c.body = train;
  }
  {
    auto& c = make("eval", "Evaluate a model on a test set");
    add_common(c, true);
    c.option<std::string>("-m,--model", "model", "Model file");
    c.option<std::string>("-d,--data", "data", "Test dataset");
    c.option<std::string>("-o,--out", "out", "JSON report");
    c.option<std::string>("--bins-csv", "bins_csv", "Per-bin errors as CSV");
    c.option<int>("--bins", "bins", "Number of geometric nbar bins");
    c.flag("--truncate", "truncate", "Drop extra sidebands from the test set");
    c.defaults = [](const Profile&) {
      return json{{"model", nullptr}, {"data", nullptr}, {"out", nullptr}, {"bins_csv", nullptr},
                  {"bins", 24}, {"truncate", false}, {"seed", 0}, {"workers", 0}};
    };
    c.body = evaluate;
  }
  {
    auto& c = make("noise-sweep", "Mean error versus readout noise N");
    add_common(c, true);
    c.option<std::string>("-m,--model", "model", "Model file");
    c.option<std::string>("-d,--data", "data", "Clean test dataset");
    c.option<std::string>("-o,--out", "out", "JSON report");
    c.option<std::string>("--csv", "csv", "Sweep curve as CSV");
    c.option<std::vector<std::uint32_t>>("--trials", "trials", "Measurement counts N")
        ->delimiter(',');
    c.flag("--truncate", "truncate", "Drop extra sidebands from the test set");
    c.defaults = [](const Profile&) {
      return json{{"model", nullptr}, {"data", nullptr}, {"out", nullptr}, {"csv", nullptr},
                  {"trials", {100, 400, 1600, 6400}}, {"truncate", false}, {"seed", 5},
                  {"workers", 0}};
    };
    c.body = sweep;
  }
  {
    auto& c = make("infer", "Estimate nbar and pulse area from one spectrum");
    add_common(c, true);
    c.option<std::string>("-m,--model", "model", "Model file");
    c.option<double>("--eta", "eta", "Lamb-Dicke parameter");
    c.option<std::vector<double>>("-p,--populations", "populations", "P_up(1..Q)")->delimiter(',');
    c.option<std::vector<double>>("--sigmas", "sigmas",
                                  "Population standard deviations (one value or Q values)")
        ->delimiter(',');
    c.option<std::size_t>("--draws", "draws", "Monte-Carlo draws for the error bar");
    c.option<std::string>("-o,--out", "out", "JSON result");
    c.defaults = [](const Profile&) {
      return json{{"model", nullptr}, {"eta", nullptr}, {"populations", nullptr}, {"sigmas", nullptr},
                  {"draws", 1000}, {"seed", 6}, {"workers", 0}, {"out", nullptr}};
    };
    c.body = infer;
  }
  {
    auto& c = make("peak-fit", "Gaussian fit of a scan trace CSV");
    add_common(c, false);
    c.option<std::string>("-i,--in", "in", "CSV with frequency_hz,population,n_measurements");
    c.option<std::string>("-o,--out", "out", "JSON result");
    c.option<int>("--max-iterations", "max_iterations", "Iteration cap");
    c.option<double>("--gradient-tolerance", "gradient_tolerance", "Gradient-norm stop");
    c.defaults = [](const Profile&) {
      return json{{"in", nullptr}, {"out", nullptr}, {"max_iterations", 200},
                  {"gradient_tolerance", 1e-10}, {"seed", 0}};
    };
    c.body = peak_fit;
  }
  {
    auto& c = make("heat-fit", "Least-squares heating line from a duration_ms,nbar CSV");
    add_common(c, false);
    c.option<std::string>("-i,--in", "in", "CSV with duration_ms,nbar");
    c.option<std::string>("-o,--out", "out", "JSON result");
    c.defaults = [](const Profile&) { return json{{"in", nullptr}, {"out", nullptr}, {"seed", 0}}; };
    c.body = heat_fit;
  }
  {
    auto& c = make("verify-line", "Compare model estimates with a heating line");
    add_common(c, false);
    c.option<std::string>("-m,--model", "model", "Model file");
    c.option<std::string>("--line", "line", "heat-fit JSON output");
    c.option<double>("--rate", "rate", "Heating rate (phonons/ms) when --line is absent");
    c.option<double>("--intercept", "intercept", "Line intercept (phonons) when --line is absent");
    c.option<std::vector<double>>("--durations", "durations", "Heating durations (ms)")
        ->delimiter(',');
    c.option<double>("--eta", "eta", "Lamb-Dicke parameter of the synthetic spectra");
    c.option<double>("--omega-t", "omega_t", "Pulse area of the synthetic spectra (rad)");
    c.option<std::uint32_t>("-N,--noise-trials", "noise_trials", "Readout noise N (0 = clean)");
    c.option<double>("--tail-epsilon", "tail_epsilon", "Untruncated thermal tail mass");
    c.option<std::string>("-o,--out", "out", "CSV comparison table");
    c.defaults = [](const Profile& p) {
      return json{{"model", nullptr},       {"line", nullptr},     {"rate", nullptr},
                  {"intercept", nullptr},   {"durations", nullptr}, {"eta", 0.122},
                  {"omega_t", physics::kPi}, {"noise_trials", 0},   {"seed", 7},
                  {"tail_epsilon", p.tail_epsilon}, {"out", nullptr}};
    };
    c.body = verify_line;
  }
  return cmds;
}

json load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, "config " + path + ": " + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::kFormat, "config " + path + ": top level must be an object");
  return j;
}

// Profile < config file < flags. Top-level config keys unknown to the command
// are ignored so one file can serve several commands; a section named after
// the command overrides the top level and must not contain unknown keys.
json resolve(const Command& c) {
  json file_layer = json::object();
  if (!c.config_path.empty()) {
    const json file = load_config(c.config_path);
    for (const auto& key : c.keys)
      if (file.contains(key)) file_layer[key] = file[key];
    if (file.contains(c.name)) {
      const json& section = file[c.name];
      if (!section.is_object())
        fail(ErrorCode::kFormat, "config section '" + c.name + "' must be an object");
      for (const auto& [key, value] : section.items()) {
        if (std::find(c.keys.begin(), c.keys.end(), key) == c.keys.end())
          fail(ErrorCode::kInvalidInput, "config section '" + c.name + "': unknown key '" + key + "'");
        file_layer[key] = value;
      }
    }
  }
  json flag_layer = json::object();
  for (const auto& s : c.setters) s(flag_layer);

  std::string name = "fast";
  if (file_layer.contains("profile")) name = get<std::string>(file_layer, "profile");
  if (flag_layer.contains("profile")) name = get<std::string>(flag_layer, "profile");
  json cfg = c.defaults(profile(name));
  cfg["profile"] = name;
  cfg.update(file_layer);
  cfg.update(flag_layer);
  return cfg;
}

}  // namespace

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return kExitInvalidInput;
    case ErrorCode::kFormat: return kExitFormat;
    case ErrorCode::kQMismatch: return kExitQMismatch;
    case ErrorCode::kFitFailure: return kExitFitFailure;
    case ErrorCode::kResourceLimit: return kExitResourceLimit;
    case ErrorCode::kIo: return kExitIo;
  }
  return kExitInternal;
}

Profile profile(const std::string& name) {
  if (name == "fast")
    return {"fast", 200'000, 50'000, 1e-3, 10, 256, 20, 256, 1e-3, nn::LrSchedule::kCosine};
  if (name == "full")
    return {"full", 1'000'000, 50'000, 1e-4, 15, 1024, 20, 256, 1e-3, nn::LrSchedule::kCosine};
  fail(ErrorCode::kInvalidInput, "unknown profile '" + name + "' (expected fast or full)");
}

json to_json(const Profile& p) {
  return {{"name", p.name},
          {"train_count", p.train_count},
          {"test_count", p.test_count},
          {"tail_epsilon", p.tail_epsilon},
          {"sideband_count", p.sideband_count},
          {"hidden_width", p.hidden_width},
          {"epochs", p.epochs},
          {"batch_size", p.batch_size},
          {"learning_rate", p.learning_rate},
          {"schedule", nn::to_string(p.schedule)}};
}

json versions() {
  return {{"program", kVersion},
          {"dataset_format", dataset::kFormatVersion},
          {"model_format", nn::kModelFormatVersion}};
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trapped-ion thermometry from blue-sideband spectra", "sbthermo"};
  app.set_version_flag("--version", std::string("sbthermo ") + kVersion + " (dataset format " +
                                        std::to_string(dataset::kFormatVersion) +
                                        ", model format " +
                                        std::to_string(nn::kModelFormatVersion) + ")");
  app.require_subcommand(1);
  const auto cmds = build(app);

  std::vector<std::string> argv_store{"sbthermo"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const Command* cmd = nullptr;
  for (const auto& c : cmds)
    if (c->app->parsed()) cmd = c.get();
  if (!cmd) return kExitUsage;

  Context ctx{out, err};
  try {
    const json cfg = resolve(*cmd);
    cmd->body(cfg, ctx);
    return kExitOk;
  } catch (const Error& e) {
    err << "sbthermo " << cmd->name << ": " << to_string(e.code()) << " during " << ctx.stage
        << ": " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::bad_alloc&) {
    err << "sbthermo " << cmd->name << ": out of memory during " << ctx.stage << "\n";
    return kExitResourceLimit;
  } catch (const std::exception& e) {
    err << "sbthermo " << cmd->name << ": internal error during " << ctx.stage << ": " << e.what()
        << "\n";
    return kExitInternal;
  }
}

}  // namespace sbthermo::cli
