#pragma once

#include <optional>
#include <vector>

#include "json.hpp"

#include "epiforecast/baselines.h"
#include "epiforecast/data.h"
#include "epiforecast/evaluation.h"
#include "epiforecast/serialization.h"
#include "epiforecast/training.h"

namespace epi {

struct ExperimentSpec {
  RunConfig run;
  std::optional<HyperGrid> grid;  // empty trains `run` directly
  GridOptions grid_options;
  PccMode pcc_mode = PccMode::pooled;
};

struct ExperimentOutcome {
  Checkpoint checkpoint;
  TrainReport report;
  EvalResult validation;
  EvalResult test;
  std::optional<GridSearchResult> grid;
};

// Prepares the series, trains (or grid-searches) and evaluates the selected
// checkpoint on the validation and test splits.
ExperimentOutcome run_experiment(const EpidemicSeries& series, const ExperimentSpec& spec);

// Normalizes `series` with the checkpoint's statistics and windows it with
// the checkpoint's split, window and horizon. Throws DataError when the
// region count differs from the checkpoint.
WindowedSplits checkpoint_windows(const Checkpoint& checkpoint, const EpidemicSeries& series);

EvalResult evaluate_checkpoint(const Checkpoint& checkpoint, const EpidemicSeries& series, SplitPart part,
                               PccMode mode = PccMode::pooled);

// Denormalized forecast from the window ending at `anchor` (default: the last
// observation).
std::vector<double> forecast(const Checkpoint& checkpoint, const EpidemicSeries& series,
                             std::optional<std::size_t> anchor = std::nullopt);

struct BaselineReport {
  std::size_t lags = 0;
  EvalResult persistence;
  EvalResult ar;
  EvalResult lridge;
  double lridge_lambda = 0.0;
  std::vector<std::pair<double, double>> lridge_validation;
};

// Persistence, per-region AR and LRidge (lambda picked on validation) fit on
// the normalized training windows and scored on the test split.
BaselineReport run_baselines(const PreparedData& data, std::size_t lags, PccMode mode = PccMode::pooled);

nlohmann::json to_json(const BaselineReport& report);
nlohmann::json grid_summary(const GridSearchResult& grid);

}  // namespace epi
