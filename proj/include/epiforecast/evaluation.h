#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epiforecast/data.h"
#include "epiforecast/matrix.h"

namespace epi {

enum class PccMode { pooled, per_region_mean };

PccMode parse_pcc_mode(std::string_view name);
std::string to_string(PccMode mode);

struct RegionMetrics {
  std::string region;
  double rmse = 0.0;
  std::optional<double> pcc;  // empty when either side has zero variance
};

struct EvalResult {
  std::size_t horizon = 0;
  std::size_t samples = 0;
  double rmse = 0.0;
  std::optional<double> pcc;
  std::string pcc_error;  // set when pcc is undefined
  PccMode pcc_mode = PccMode::pooled;
  std::vector<RegionMetrics> per_region;
};

// Pearson correlation, or empty when either input has zero variance.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

// pred and truth are samples x regions on the real scale.
EvalResult compute_metrics(const Matrix& pred, const Matrix& truth, const std::vector<std::string>& regions,
                           std::size_t horizon, PccMode mode = PccMode::pooled);

// Maps a normalized N x T window to normalized N-vector forecasts.
using Forecaster = std::function<std::vector<double>(const Matrix& window)>;

// Denormalizes forecasts and compares them with the raw counts at each
// sample's target index.
EvalResult evaluate(const Forecaster& forecaster, std::span<const WindowSample> samples, const NormStats& stats,
                    const EpidemicSeries& raw, std::size_t horizon, PccMode mode = PccMode::pooled);

}  // namespace epi
