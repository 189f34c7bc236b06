#include "epiforecast/baselines.h"

#include <Eigen/Dense>
#include <cmath>

#include "epiforecast/errors.h"

namespace epi {

RidgeFit fit_ridge(const Matrix& x, std::span<const double> y, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("ridge lambda must be finite and >= 0");
  const std::size_t n = x.rows, p = x.cols;
  if (y.size() != n) throw DimensionError("fit_ridge: target length does not match rows");
  if (n == 0) throw DataError("fit_ridge: no training samples");
  if (lambda == 0.0 && n < p + 1) {
    throw DataError("underdetermined system: " + std::to_string(n) + " samples for " + std::to_string(p + 1) +
                    " unknowns");
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(x.data.data(), n, p);
  Eigen::Map<const Eigen::VectorXd> Y(y.data(), n);
  const Eigen::RowVectorXd xm = X.colwise().mean();
  const double ym = Y.mean();

  RidgeFit fit;
  fit.coef.assign(p, 0.0);
  if (p > 0) {
    Eigen::MatrixXd A(lambda > 0.0 ? n + p : n, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(A.rows());
    A.topRows(n) = X.rowwise() - xm;
    b.head(n) = Y.array() - ym;
    if (lambda > 0.0) A.bottomRows(p) = std::sqrt(lambda) * Eigen::MatrixXd::Identity(p, p);
    const Eigen::VectorXd beta = A.completeOrthogonalDecomposition().solve(b);
    Eigen::VectorXd::Map(fit.coef.data(), p) = beta;
    fit.intercept = ym - xm.dot(beta);
  } else {
    fit.intercept = ym;
  }
  for (double c : fit.coef) {
    if (!std::isfinite(c)) throw NumericalError("fit_ridge: non-finite coefficient");
  }
  return fit;
}

namespace {

void check_lags(std::span<const WindowSample> train, std::size_t q) {
  if (train.empty()) throw DataError("baseline fit: no training samples");
  if (q == 0 || q > train.front().input.cols) {
    throw ConfigError("baseline lags q = " + std::to_string(q) + " must be in [1, T = " +
                      std::to_string(train.front().input.cols) + "]");
  }
}

// Lag k of region r, k = 0 being the last observation.
double lag(const Matrix& window, std::size_t r, std::size_t k) { return window(r, window.cols - 1 - k); }

}  // namespace

std::vector<double> LinearBaseline::predict(const Matrix& window) const {
  if (window.rows != regions || window.cols < lags) throw DimensionError("baseline: window shape mismatch");
  std::vector<double> out(regions);
  for (std::size_t r = 0; r < regions; ++r) {
    double v = intercept[r];
    if (kind == BaselineKind::ar) {
      for (std::size_t k = 0; k < lags; ++k) v += coef(r, k) * lag(window, r, k);
    } else {
      for (std::size_t j = 0; j < regions; ++j)
        for (std::size_t k = 0; k < lags; ++k) v += coef(r, j * lags + k) * lag(window, j, k);
    }
    out[r] = v;
  }
  return out;
}

Forecaster LinearBaseline::forecaster() const {
  return [model = *this](const Matrix& window) { return model.predict(window); };
}

LinearBaseline fit_ar(std::span<const WindowSample> train, std::size_t q, double ridge) {
  check_lags(train, q);
  const std::size_t N = train.front().input.rows;
  LinearBaseline m{BaselineKind::ar, N, q, ridge, Matrix(N, q), std::vector<double>(N)};
  Matrix x(train.size(), q);
  std::vector<double> y(train.size());
  for (std::size_t r = 0; r < N; ++r) {
    for (std::size_t s = 0; s < train.size(); ++s) {
      for (std::size_t k = 0; k < q; ++k) x(s, k) = lag(train[s].input, r, k);
      y[s] = train[s].target[r];
    }
    if (train.size() < q + 1) {
      throw DataError("underdetermined system: " + std::to_string(train.size()) + " samples for " +
                      std::to_string(q + 1) + " unknowns");
    }
    RidgeFit fit = fit_ridge(x, y, ridge);
    for (std::size_t k = 0; k < q; ++k) m.coef(r, k) = fit.coef[k];
    m.intercept[r] = fit.intercept;
  }
  return m;
}

LinearBaseline fit_lridge(std::span<const WindowSample> train, std::size_t q, double lambda) {
  check_lags(train, q);
  const std::size_t N = train.front().input.rows;
  const std::size_t p = N * q;
  LinearBaseline m{BaselineKind::lridge, N, q, lambda, Matrix(N, p), std::vector<double>(N)};
  Matrix x(train.size(), p);
  for (std::size_t s = 0; s < train.size(); ++s)
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t k = 0; k < q; ++k) x(s, j * q + k) = lag(train[s].input, j, k);
  std::vector<double> y(train.size());
  for (std::size_t r = 0; r < N; ++r) {
    for (std::size_t s = 0; s < train.size(); ++s) y[s] = train[s].target[r];
    RidgeFit fit = fit_ridge(x, y, lambda);
    for (std::size_t c = 0; c < p; ++c) m.coef(r, c) = fit.coef[c];
    m.intercept[r] = fit.intercept;
  }
  return m;
}

double rmse_normalized(const Forecaster& f, std::span<const WindowSample> samples) {
  if (samples.empty()) throw ConfigError("rmse: no samples");
  long double total = 0;
  std::size_t count = 0;
  for (const WindowSample& s : samples) {
    const auto out = f(s.input);
    for (std::size_t r = 0; r < out.size(); ++r) {
      total += (out[r] - s.target[r]) * static_cast<long double>(out[r] - s.target[r]);
    }
    count += out.size();
  }
  return static_cast<double>(std::sqrt(total / count));
}

LridgeSelection select_lridge(std::span<const WindowSample> train, std::span<const WindowSample> val,
                              std::size_t q, const std::vector<double>& lambdas) {
  if (lambdas.empty()) throw ConfigError("select_lridge: empty lambda grid");
  LridgeSelection out;
  double best = std::numeric_limits<double>::infinity();
  for (double lambda : lambdas) {
    LinearBaseline m = fit_lridge(train, q, lambda);
    const double err = rmse_normalized(m.forecaster(), val);
    if (!std::isfinite(err)) throw NumericalError("select_lridge: non-finite validation error");
    out.validation.emplace_back(lambda, err);
    if (err < best || (err == best && lambda > out.model.lambda)) {
      best = err;
      out.model = std::move(m);
    }
  }
  return out;
}

std::vector<double> persistence(const Matrix& window) {
  std::vector<double> out(window.rows);
  for (std::size_t r = 0; r < window.rows; ++r) out[r] = window(r, window.cols - 1);
  return out;
}

}  // namespace epi
