#include "epiforecast/experiment.h"

#include "epiforecast/errors.h"

namespace epi {

namespace {

std::span<const WindowSample> part(const WindowedSplits& w, SplitPart p) {
  switch (p) {
    case SplitPart::train:
      return w.train;
    case SplitPart::val:
      return w.val;
    case SplitPart::test:
      return w.test;
  }
  return {};
}

}  // namespace

ExperimentOutcome run_experiment(const EpidemicSeries& series, const ExperimentSpec& spec) {
  RunConfig run = spec.run;
  run.model.regions = series.num_regions();
  const PreparedData data = prepare(series, run.model.window, run.model.horizon, run.split, run.norm);

  ExperimentOutcome out;
  std::optional<Sefnet> model;
  if (spec.grid) {
    GridSearchResult grid = grid_search(run, *spec.grid, data.windows, spec.grid_options);
    if (!grid.best) {
      throw NumericalError("all " + std::to_string(grid.runs.size()) + " grid runs failed; first error: " +
                           grid.runs.front().error);
    }
    run = grid.runs[*grid.best].config;
    out.report = *grid.runs[*grid.best].report;
    model = std::move(grid.best_model);
    grid.best_model.reset();
    out.grid = std::move(grid);
  } else {
    TrainResult r = train(run, data.windows);
    out.report = std::move(r.report);
    model = std::move(r.model);
  }

  out.checkpoint.run = run;
  out.checkpoint.regions = series.regions;
  out.checkpoint.norm_stats = data.stats;
  out.checkpoint.params = model->params().clone();
  out.checkpoint.best_epoch = out.report.best_epoch;
  out.validation = evaluate_checkpoint(out.checkpoint, series, SplitPart::val, spec.pcc_mode);
  out.test = evaluate_checkpoint(out.checkpoint, series, SplitPart::test, spec.pcc_mode);
  return out;
}

WindowedSplits checkpoint_windows(const Checkpoint& checkpoint, const EpidemicSeries& series) {
  const std::size_t n = checkpoint.run.model.regions;
  if (series.num_regions() != n) {
    throw DataError("checkpoint expects N = " + std::to_string(n) + " regions but the data has N = " +
                    std::to_string(series.num_regions()));
  }
  const SplitSpec split = SplitSpec::make(series.length(), checkpoint.run.split);
  const Matrix normalized = apply_normalization(series.counts, checkpoint.norm_stats);
  return make_windows(normalized, checkpoint.run.model.window, checkpoint.run.model.horizon, split);
}

EvalResult evaluate_checkpoint(const Checkpoint& checkpoint, const EpidemicSeries& series, SplitPart p,
                               PccMode mode) {
  const WindowedSplits windows = checkpoint_windows(checkpoint, series);
  const Sefnet model = checkpoint.model();
  return evaluate([&model](const Matrix& w) { return model.predict(w); }, part(windows, p),
                  checkpoint.norm_stats, series, checkpoint.run.model.horizon, mode);
}

std::vector<double> forecast(const Checkpoint& checkpoint, const EpidemicSeries& series,
                             std::optional<std::size_t> anchor) {
  const std::size_t n = checkpoint.run.model.regions;
  if (series.num_regions() != n) {
    throw DataError("checkpoint expects N = " + std::to_string(n) + " regions but the data has N = " +
                    std::to_string(series.num_regions()));
  }
  const std::size_t T = checkpoint.run.model.window;
  Matrix normalized = apply_normalization(series.counts, checkpoint.norm_stats);
  if (anchor) {
    if (*anchor >= series.length()) {
      throw DataError("anchor " + std::to_string(*anchor) + " is past the last time index " +
                      std::to_string(series.length() - 1));
    }
    if (*anchor + 1 < T) {
      throw DataError("need at least T = " + std::to_string(T) + " observations up to the anchor");
    }
    Matrix trimmed(n, *anchor + 1);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t t = 0; t <= *anchor; ++t) trimmed(r, t) = normalized(r, t);
    normalized = std::move(trimmed);
  }
  const Matrix window = latest_window(normalized, T);
  return denormalize(checkpoint.model().predict(window), checkpoint.norm_stats);
}

BaselineReport run_baselines(const PreparedData& data, std::size_t lags, PccMode mode) {
  const auto& w = data.windows;
  const std::size_t h = w.horizon;
  BaselineReport r;
  r.lags = lags;
  r.persistence = evaluate(persistence, w.test, data.stats, data.raw, h, mode);
  r.ar = evaluate(fit_ar(w.train, lags).forecaster(), w.test, data.stats, data.raw, h, mode);
  LridgeSelection sel = select_lridge(w.train, w.val, lags);
  r.lridge = evaluate(sel.model.forecaster(), w.test, data.stats, data.raw, h, mode);
  r.lridge_lambda = sel.model.lambda;
  r.lridge_validation = sel.validation;
  return r;
}

nlohmann::json to_json(const BaselineReport& r) {
  nlohmann::json path = nlohmann::json::array();
  for (auto [lambda, err] : r.lridge_validation) path.push_back({{"lambda", lambda}, {"val_rmse_normalized", err}});
  return {{"lags", r.lags},
          {"persistence", to_json(r.persistence)},
          {"ar", to_json(r.ar)},
          {"lridge", to_json(r.lridge)},
          {"lridge_lambda", r.lridge_lambda},
          {"lridge_validation", path}};
}

nlohmann::json grid_summary(const GridSearchResult& grid) {
  nlohmann::json runs = nlohmann::json::array();
  for (const GridRun& run : grid.runs) {
    const SefnetConfig& m = run.config.model;
    nlohmann::json j = {{"lstm_hidden", m.lstm_hidden}, {"lstm_layers", m.lstm_layers}, {"filters", m.filters},
                        {"pool", m.pool},               {"attn_dim", m.attn_dim},       {"ar_window", m.ar_window},
                        {"lr", run.config.lr}};
    if (run.report) {
      j["best_val_loss"] = run.report->best_val_loss;
      j["best_epoch"] = run.report->best_epoch;
      j["parameter_count"] = run.report->parameter_count;
    } else {
      j["error"] = run.error;
    }
    runs.push_back(std::move(j));
  }
  return {{"runs", runs},
          {"failures", grid.failures},
          {"selected", grid.best ? nlohmann::json(*grid.best) : nlohmann::json(nullptr)}};
}

}  // namespace epi
