#include "epiforecast/cli.h"

#include <atomic>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "epiforecast/errors.h"
#include "epiforecast/experiment.h"

namespace epi {

namespace fs = std::filesystem;

namespace {

struct UsageError : ConfigError {
  using ConfigError::ConfigError;
};

// Shortest text that reads back to the same double.
std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string pcc_cell(const std::optional<double>& pcc) { return pcc ? num(*pcc) : ""; }

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

fs::path output_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw DataError(out + ": cannot create output directory");
  return dir;
}

void append_results(const fs::path& path, const std::vector<std::string>& rows) {
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw DataError(path.string() + ": cannot write");
  if (fresh) out << "dataset,model,variant,horizon,seed,rmse,pcc\n";
  for (const std::string& r : rows) out << r << "\n";
}

std::string result_row(const std::string& dataset, const std::string& model, const std::string& variant,
                       std::size_t horizon, const std::string& seed, const EvalResult& e) {
  return dataset + "," + model + "," + variant + "," + std::to_string(horizon) + "," + seed + "," + num(e.rmse) + "," +
         pcc_cell(e.pcc);
}

std::string dataset_name(const std::string& data, const std::optional<std::string>& label) {
  return label ? *label : fs::path(data).stem().string();
}

// Settings shared by train and ablate: a run configuration plus where the
// data lives and how the sweep is organised.
struct Settings {
  RunConfig run;
  std::string data;
  std::string out;
  json grid = "none";
  std::size_t grid_max_runs = 0;
  std::uint64_t grid_seed = 0;
  std::size_t jobs = 1;
  PccMode pcc_mode = PccMode::pooled;
  bool seed_given = false;
};

const std::set<std::string> kSettingsKeys = {"data", "out", "grid", "grid_max_runs", "grid_seed", "jobs", "pcc_mode"};

void apply_config_file(Settings& s, const std::string& path) {
  json j = read_json(path);
  if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
  json run = json::object();
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "data") {
        s.data = value.get<std::string>();
      } else if (key == "out") {
        s.out = value.get<std::string>();
      } else if (key == "grid") {
        s.grid = value;
      } else if (key == "grid_max_runs") {
        s.grid_max_runs = value.get<std::size_t>();
      } else if (key == "grid_seed") {
        s.grid_seed = value.get<std::uint64_t>();
      } else if (key == "jobs") {
        s.jobs = value.get<std::size_t>();
      } else if (key == "pcc_mode") {
        s.pcc_mode = parse_pcc_mode(value.get<std::string>());
      } else {
        run[key] = value;
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  s.seed_given = run.contains("seed");
  s.run = run_config_from_json(run, s.run);
}

json settings_json(const Settings& s) {
  json j = to_json(s.run);
  j["data"] = s.data;
  j["out"] = s.out;
  j["grid"] = s.grid;
  j["grid_max_runs"] = s.grid_max_runs;
  j["grid_seed"] = s.grid_seed;
  j["jobs"] = s.jobs;
  j["pcc_mode"] = to_string(s.pcc_mode);
  return j;
}

std::optional<HyperGrid> grid_from_json(const json& g) {
  if (g.is_string()) {
    if (g == "none") return std::nullopt;
    if (g == "standard") return HyperGrid::standard();
    throw ConfigError("grid must be \"none\", \"standard\" or an object of value lists");
  }
  if (!g.is_object()) throw ConfigError("grid must be \"none\", \"standard\" or an object of value lists");
  HyperGrid grid;
  std::map<std::string, std::vector<std::size_t>*> sizes = {
      {"lstm_hidden", &grid.lstm_hidden}, {"lstm_layers", &grid.lstm_layers}, {"filters", &grid.filters},
      {"pool", &grid.pool},               {"attn_dim", &grid.attn_dim},       {"ar_window", &grid.ar_window}};
  try {
    for (const auto& [key, value] : g.items()) {
      if (key == "lr") {
        grid.lr = value.get<std::vector<double>>();
      } else if (auto it = sizes.find(key); it != sizes.end()) {
        *it->second = value.get<std::vector<std::size_t>>();
      } else {
        throw ConfigError("unknown grid key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
  return grid;
}

void apply_seed_fallback(Settings& s) {
  if (s.seed_given) return;
  if (const char* env = std::getenv("EPIFORECAST_SEED"); env && *env) {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0' || errno != 0 || env[0] == '-') {
      throw ConfigError(std::string("EPIFORECAST_SEED is not a non-negative integer: '") + env + "'");
    }
    s.run.seed = v;
  }
}

// Flags that override the config file.
struct CommonFlags {
  std::optional<std::string> config, data, out, normalization, pcc_mode, ablation, grid;
  std::optional<std::size_t> horizon, window, max_epochs, patience, batch_size, jobs, grid_max_runs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, dropout;

  void add(CLI::App& app, bool with_grid) {
    app.add_option("--config", config, "JSON config file; flags override its values");
    app.add_option("--data", data, "CSV of case counts (regions as columns)");
    app.add_option("--out", out, "output directory");
    app.add_option("--horizon", horizon, "forecast horizon h");
    app.add_option("--window", window, "input window T");
    app.add_option("--seed", seed, "run seed (fallback: EPIFORECAST_SEED)");
    app.add_option("--lr", lr, "learning rate");
    app.add_option("--dropout", dropout, "dropout before the output layer");
    app.add_option("--max-epochs", max_epochs, "epoch limit");
    app.add_option("--patience", patience, "early-stopping patience");
    app.add_option("--batch-size", batch_size, "mini-batch size");
    app.add_option("--normalization", normalization, "per-region or global");
    app.add_option("--pcc-mode", pcc_mode, "pooled or per-region");
    app.add_option("--jobs", jobs, "parallel training runs");
    if (with_grid) {
      app.add_option("--ablation", ablation, "model variant");
      app.add_option("--grid", grid, "none, standard, or a JSON object of value lists");
      app.add_option("--grid-max-runs", grid_max_runs, "train a seeded subset of this many grid points");
    }
  }

  Settings resolve() const {
    Settings s;
    if (config) apply_config_file(s, *config);
    if (data) s.data = *data;
    if (out) s.out = *out;
    if (horizon) s.run.model.horizon = *horizon;
    if (window) s.run.model.window = *window;
    if (seed) {
      s.run.seed = *seed;
      s.seed_given = true;
    }
    if (lr) s.run.lr = *lr;
    if (dropout) s.run.model.dropout = *dropout;
    if (max_epochs) s.run.max_epochs = *max_epochs;
    if (patience) s.run.patience = *patience;
    if (batch_size) s.run.batch_size = *batch_size;
    if (normalization) s.run.norm = parse_norm_mode(*normalization);
    if (pcc_mode) s.pcc_mode = parse_pcc_mode(*pcc_mode);
    if (jobs) s.jobs = *jobs;
    if (ablation) s.run.model.ablation = parse_ablation(*ablation);
    if (grid) {
      if (*grid == "none" || *grid == "standard") {
        s.grid = *grid;
      } else {
        try {
          s.grid = json::parse(*grid);
        } catch (const json::exception& e) {
          throw ConfigError(std::string("--grid: ") + e.what());
        }
      }
    }
    if (grid_max_runs) s.grid_max_runs = *grid_max_runs;
    apply_seed_fallback(s);
    if (s.data.empty()) throw UsageError("--data is required (flag or config key \"data\")");
    if (s.jobs == 0) throw ConfigError("--jobs must be at least 1");
    return s;
  }
};

void write_epochs_csv(const fs::path& path, const TrainReport& report) {
  std::string text = "epoch,train_loss,val_loss\n";
  for (const EpochRecord& e : report.epochs) {
    text += std::to_string(e.epoch) + "," + num(e.train_loss) + "," + num(e.val_loss) + "\n";
  }
  write_text(path, text);
}

json data_summary(const std::string& path, const EpidemicSeries& series, const RunConfig& run) {
  const PreparedData d = prepare(series, run.model.window, run.model.horizon, run.split, run.norm);
  return {{"file", fs::path(path).filename().string()},
          {"regions", series.num_regions()},
          {"length", series.length()},
          {"train_end", d.split.train_end},
          {"val_end", d.split.val_end},
          {"samples", {{"train", d.windows.train.size()}, {"val", d.windows.val.size()}, {"test", d.windows.test.size()}}}};
}

int cmd_train(const CommonFlags& flags, std::ostream& out, std::ostream& err) {
  Settings s = flags.resolve();
  if (s.out.empty()) throw UsageError("train: --out is required");
  const fs::path dir = output_dir(s.out);
  write_text(dir / "effective-config.json", dump(settings_json(s)));

  const auto started = std::chrono::steady_clock::now();
  const EpidemicSeries series = load_csv(s.data);
  ExperimentSpec spec{s.run, grid_from_json(s.grid), {s.jobs, s.grid_max_runs, s.grid_seed}, s.pcc_mode};
  spec.run.model.regions = series.num_regions();
  spec.run.validate();
  const json summary = data_summary(s.data, series, spec.run);
  ExperimentOutcome result = run_experiment(series, spec);

  save_checkpoint(result.checkpoint, dir / "checkpoint.json");
  write_epochs_csv(dir / "epochs.csv", result.report);
  json report = {{"data", summary},
                 {"selected_config", to_json(result.checkpoint.run)},
                 {"train", to_json(result.report)},
                 {"validation", to_json(result.validation)},
                 {"test", to_json(result.test)}};
  if (result.grid) report["grid"] = grid_summary(*result.grid);
  write_text(dir / "report.json", dump(report));

  out << "best epoch " << result.report.best_epoch << " of " << result.report.epochs.size() << " ("
      << result.report.stop_reason << "), val loss " << num(result.report.best_val_loss) << "\n";
  out << "test rmse " << num(result.test.rmse) << ", pcc " << (result.test.pcc ? num(*result.test.pcc) : "undefined")
      << "\n";
  if (result.grid) out << "grid: " << result.grid->runs.size() << " runs, " << result.grid->failures << " failed\n";
  err << "wall time " << std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()
      << " s\n";
  return kExitOk;
}

SplitPart parse_split(const std::string& name) {
  if (name == "train") return SplitPart::train;
  if (name == "val") return SplitPart::val;
  if (name == "test") return SplitPart::test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& data, const std::optional<std::string>& out_dir,
                 const std::string& split, const std::string& pcc_mode, const std::optional<std::string>& label,
                 std::ostream& out) {
  const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  const EpidemicSeries series = load_csv(data);
  const EvalResult result = evaluate_checkpoint(checkpoint, series, parse_split(split), parse_pcc_mode(pcc_mode));
  json j = to_json(result);
  j["split"] = split;
  if (!out_dir) {
    out << dump(j);
    return kExitOk;
  }
  const fs::path dir = output_dir(*out_dir);
  write_text(dir / "eval.json", dump(j));
  append_results(dir / "results.csv",
                 {result_row(dataset_name(data, label), "sefnet", to_string(checkpoint.run.model.ablation),
                             result.horizon, std::to_string(checkpoint.run.seed), result)});
  out << "rmse " << num(result.rmse) << ", pcc " << (result.pcc ? num(*result.pcc) : "undefined") << "\n";
  return kExitOk;
}

int cmd_predict(const std::string& checkpoint_path, const std::string& data, std::optional<std::size_t> at,
                const std::optional<std::string>& out_dir, std::ostream& out) {
  const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  const EpidemicSeries series = load_csv(data);
  const auto values = forecast(checkpoint, series, at);
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t r = 0; r < values.size(); ++r) {
    if (!std::isfinite(values[r])) throw NumericalError("forecast for region '" + series.regions[r] + "' is not finite");
    j[series.regions[r]] = values[r];
  }
  const std::string text = j.dump(2) + "\n";
  if (out_dir) {
    write_text(output_dir(*out_dir) / "forecast.json", text);
  } else {
    out << text;
  }
  return kExitOk;
}

int cmd_baselines(const CommonFlags& flags, std::optional<std::size_t> lags, const std::optional<std::string>& label,
                  std::ostream& out) {
  Settings s = flags.resolve();
  const EpidemicSeries series = load_csv(s.data);
  const PreparedData data = prepare(series, s.run.model.window, s.run.model.horizon, s.run.split, s.run.norm);
  const std::size_t q = lags.value_or(s.run.model.window);
  const BaselineReport r = run_baselines(data, q, s.pcc_mode);
  json j = to_json(r);
  j["horizon"] = s.run.model.horizon;
  j["window"] = s.run.model.window;
  if (s.out.empty()) {
    out << dump(j);
    return kExitOk;
  }
  const fs::path dir = output_dir(s.out);
  write_text(dir / "baselines.json", dump(j));
  const std::string ds = dataset_name(s.data, label);
  const std::size_t h = s.run.model.horizon;
  append_results(dir / "results.csv", {result_row(ds, "persistence", "-", h, "-", r.persistence),
                                       result_row(ds, "ar", "-", h, "-", r.ar),
                                       result_row(ds, "lridge", "-", h, "-", r.lridge)});
  out << "persistence rmse " << num(r.persistence.rmse) << "\nar rmse " << num(r.ar.rmse) << "\nlridge rmse "
      << num(r.lridge.rmse) << " (lambda " << num(r.lridge_lambda) << ")\n";
  return kExitOk;
}

struct Stats {
  double mean = 0.0, sd = 0.0;
};

Stats mean_sd(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

int cmd_ablate(const CommonFlags& flags, const std::string& variants_text, const std::string& seeds_text,
               const std::optional<std::string>& label, std::ostream& out) {
  Settings s = flags.resolve();
  if (s.out.empty()) throw UsageError("ablate: --out is required");
  std::vector<Ablation> variants;
  for (const std::string& v : split_list(variants_text)) variants.push_back(parse_ablation(v));
  std::vector<std::uint64_t> seeds;
  for (const std::string& v : split_list(seeds_text)) {
    std::uint64_t seed = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), seed);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("--seeds: '" + v + "' is not a seed");
    seeds.push_back(seed);
  }
  if (variants.empty() || seeds.empty()) throw UsageError("ablate: need at least one variant and one seed");

  const fs::path dir = output_dir(s.out);
  json effective = settings_json(s);
  effective["variants"] = split_list(variants_text);
  effective["seeds"] = seeds;
  write_text(dir / "effective-config.json", dump(effective));

  const EpidemicSeries series = load_csv(s.data);
  s.run.model.regions = series.num_regions();

  struct Cell {
    Ablation variant;
    std::uint64_t seed;
    std::optional<ExperimentOutcome> outcome;
    std::string error;
  };
  std::vector<Cell> cells;
  for (Ablation v : variants)
    for (std::uint64_t seed : seeds) cells.push_back({v, seed, std::nullopt, ""});

  auto run_cell = [&](Cell& cell) {
    try {
      ExperimentSpec spec{s.run, std::nullopt, {}, s.pcc_mode};
      spec.run.model = ablate(spec.run.model, cell.variant);
      spec.run.seed = cell.seed;
      cell.outcome = run_experiment(series, spec);
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  };
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  const std::size_t jobs = std::min(s.jobs, cells.size());
  for (std::size_t w = 1; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(cells[i]);
    });
  }
  for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(cells[i]);
  for (std::thread& t : workers) t.join();

  const std::string ds = dataset_name(s.data, label);
  const std::size_t h = s.run.model.horizon;
  std::string rows = "dataset,variant,seed,horizon,rmse,pcc,best_epoch,error\n";
  json cells_json = json::array();
  for (const Cell& c : cells) {
    rows += ds + "," + to_string(c.variant) + "," + std::to_string(c.seed) + "," + std::to_string(h) + ",";
    json cj = {{"variant", to_string(c.variant)}, {"seed", c.seed}};
    if (c.outcome) {
      rows += num(c.outcome->test.rmse) + "," + pcc_cell(c.outcome->test.pcc) + "," +
              std::to_string(c.outcome->report.best_epoch) + ",\n";
      cj["test"] = to_json(c.outcome->test);
      cj["best_epoch"] = c.outcome->report.best_epoch;
    } else {
      std::string msg = c.error;
      for (char& ch : msg) {
        if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
      }
      rows += ",,," + msg + "\n";
      cj["error"] = c.error;
    }
    cells_json.push_back(std::move(cj));
  }
  write_text(dir / "ablation.csv", rows);

  std::string summary = "variant,runs,failures,rmse_mean,rmse_sd,pcc_mean,pcc_sd\n";
  json summary_json = json::array();
  for (Ablation v : variants) {
    std::vector<double> rmse, pcc;
    std::size_t failures = 0;
    for (const Cell& c : cells) {
      if (c.variant != v) continue;
      if (!c.outcome) {
        ++failures;
        continue;
      }
      rmse.push_back(c.outcome->test.rmse);
      if (c.outcome->test.pcc) pcc.push_back(*c.outcome->test.pcc);
    }
    const Stats r = mean_sd(rmse), p = mean_sd(pcc);
    summary += to_string(v) + "," + std::to_string(rmse.size()) + "," + std::to_string(failures) + "," +
               num(r.mean) + "," + num(r.sd) + "," + num(p.mean) + "," + num(p.sd) + "\n";
    summary_json.push_back({{"variant", to_string(v)}, {"runs", rmse.size()}, {"failures", failures},
                            {"rmse_mean", r.mean}, {"rmse_sd", r.sd}, {"pcc_mean", p.mean}, {"pcc_sd", p.sd}});
    out << to_string(v) << ": rmse " << num(r.mean) << " +- " << num(r.sd) << " over " << rmse.size() << " runs";
    if (failures) out << ", " << failures << " failed";
    out << "\n";
  }
  write_text(dir / "ablation-summary.csv", summary);
  write_text(dir / "ablation.json", dump({{"cells", cells_json}, {"summary", summary_json}}));
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"SEFNet epidemic forecasting"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  CLI::App* train = app.add_subcommand("train", "train a model and write checkpoint, report and epoch log");
  train_flags.add(*train, true);

  std::string eval_checkpoint, eval_data, eval_split = "test", eval_pcc = "pooled";
  std::optional<std::string> eval_out, eval_label;
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a data split");
  evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint.json from train")->required();
  evaluate->add_option("--data", eval_data, "CSV of case counts")->required();
  evaluate->add_option("--out", eval_out, "output directory (default: print JSON)");
  evaluate->add_option("--split", eval_split, "train, val or test");
  evaluate->add_option("--pcc-mode", eval_pcc, "pooled or per-region");
  evaluate->add_option("--dataset", eval_label, "dataset name for results.csv");

  CommonFlags ablate_flags;
  std::string variants = "none,no-inter,no-intra,no-ar,no-raconv,no-fusion", seeds = "0,1,2";
  std::optional<std::string> ablate_label;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "train and evaluate each (variant, seed) pair");
  ablate_flags.add(*ablate_cmd, false);
  ablate_cmd->add_option("--variants", variants, "comma-separated variants");
  ablate_cmd->add_option("--seeds", seeds, "comma-separated seeds");
  ablate_cmd->add_option("--dataset", ablate_label, "dataset name for the result tables");

  std::string predict_checkpoint, predict_data;
  std::optional<std::size_t> predict_at;
  std::optional<std::string> predict_out;
  CLI::App* predict = app.add_subcommand("predict", "forecast h steps past a window");
  predict->add_option("--checkpoint", predict_checkpoint, "checkpoint.json from train")->required();
  predict->add_option("--data", predict_data, "CSV of case counts")->required();
  auto* latest = predict->add_flag("--latest", "use the window ending at the last observation (default)");
  predict->add_option("--at", predict_at, "use the window ending at this time index")->excludes(latest);
  predict->add_option("--out", predict_out, "output directory (default: print JSON)");

  CommonFlags baseline_flags;
  std::optional<std::size_t> lags;
  std::optional<std::string> baseline_label;
  CLI::App* baselines = app.add_subcommand("baselines", "persistence, AR and LRidge on the test split");
  baseline_flags.add(*baselines, false);
  baselines->add_option("--lags", lags, "lags q (default: window)");
  baselines->add_option("--dataset", baseline_label, "dataset name for results.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_flags, out, err);
    if (*evaluate) return cmd_evaluate(eval_checkpoint, eval_data, eval_out, eval_split, eval_pcc, eval_label, out);
    if (*ablate_cmd) return cmd_ablate(ablate_flags, variants, seeds, ablate_label, out);
    if (*predict) return cmd_predict(predict_checkpoint, predict_data, predict_at, predict_out, out);
    if (*baselines) return cmd_baselines(baseline_flags, lags, baseline_label, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DimensionError& e) {
    err << "shape error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace epi
