#pragma once

#include <span>
#include <string>
#include <vector>

#include "epiforecast/data.h"
#include "epiforecast/evaluation.h"
#include "epiforecast/matrix.h"

namespace epi {

enum class BaselineKind { ar, lridge };

// One linear model per target region. AR rows use that region's own q lags;
// LRidge rows use all N*q lags, region-major with the most recent lag first.
struct LinearBaseline {
  BaselineKind kind = BaselineKind::ar;
  std::size_t regions = 0;
  std::size_t lags = 0;
  double lambda = 0.0;
  Matrix coef;  // N x q (AR) or N x Nq (LRidge)
  std::vector<double> intercept;

  std::vector<double> predict(const Matrix& window) const;
  Forecaster forecaster() const;
};

// Ridge least squares with an unpenalized intercept. Throws DataError when
// lambda is zero and there are fewer samples than unknowns.
struct RidgeFit {
  std::vector<double> coef;
  double intercept = 0.0;
};
RidgeFit fit_ridge(const Matrix& x, std::span<const double> y, double lambda);

LinearBaseline fit_ar(std::span<const WindowSample> train, std::size_t q, double ridge = 1e-8);
LinearBaseline fit_lridge(std::span<const WindowSample> train, std::size_t q, double lambda);

struct LridgeSelection {
  LinearBaseline model;
  std::vector<std::pair<double, double>> validation;  // (lambda, normalized val RMSE)
};

// Fits each lambda on train and keeps the lowest validation RMSE (ties go to
// the larger lambda).
LridgeSelection select_lridge(std::span<const WindowSample> train, std::span<const WindowSample> val,
                              std::size_t q, const std::vector<double>& lambdas = {0.01, 0.1, 1.0, 10.0});

// Repeats the last observation of each region.
std::vector<double> persistence(const Matrix& window);

double rmse_normalized(const Forecaster& f, std::span<const WindowSample> samples);

}  // namespace epi
