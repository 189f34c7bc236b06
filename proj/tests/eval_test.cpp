#include <gtest/gtest.h>

#include <cmath>

#include "epiforecast/baselines.h"
#include "epiforecast/errors.h"
#include "epiforecast/evaluation.h"
#include "epiforecast/rng.h"

namespace epi {
namespace {

Matrix column(std::vector<double> v) {
  Matrix m(v.size(), 1);
  m.data = std::move(v);
  return m;
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.normal(5.0, 2.0);
  return m;
}

std::vector<std::string> labels(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("r" + std::to_string(i));
  return out;
}

// Windows straight from an unnormalized N x L series with every target in one list.
std::vector<WindowSample> windows_of(const Matrix& series, std::size_t T, std::size_t h) {
  std::vector<WindowSample> out;
  for (std::size_t t = T - 1; t + h < series.cols; ++t) {
    WindowSample s;
    s.input = Matrix(series.rows, T);
    for (std::size_t r = 0; r < series.rows; ++r) {
      for (std::size_t k = 0; k < T; ++k) s.input(r, k) = series(r, t + 1 - T + k);
      s.target.push_back(series(r, t + h));
    }
    s.t = t;
    s.target_index = t + h;
    out.push_back(std::move(s));
  }
  return out;
}

TEST(Metrics, PerfectPrediction) {
  auto r = compute_metrics(column({1, 2, 3}), column({1, 2, 3}), labels(1), 3);
  EXPECT_EQ(r.rmse, 0.0);
  ASSERT_TRUE(r.pcc);
  EXPECT_DOUBLE_EQ(*r.pcc, 1.0);
}

TEST(Metrics, ConstantOffset) {
  auto r = compute_metrics(column({3.5, 4.5, 0.5, 9.5}), column({1, 2, -2, 7}), labels(1), 1);
  EXPECT_NEAR(r.rmse, 2.5, 1e-12);
  EXPECT_NEAR(*r.pcc, 1.0, 1e-12);
}

TEST(Metrics, WorkedExample) {
  auto r = compute_metrics(column({2, 4, 6}), column({1, 2, 3}), labels(1), 1);
  EXPECT_NEAR(r.rmse, std::sqrt(14.0 / 3.0), 1e-12);
  EXPECT_NEAR(*r.pcc, 1.0, 1e-12);
}

TEST(Metrics, ZeroVarianceTruthIsFlagged) {
  auto r = compute_metrics(column({1, 2, 3}), column({4, 4, 4}), labels(1), 1);
  EXPECT_FALSE(r.pcc.has_value());
  EXPECT_FALSE(r.pcc_error.empty());
  EXPECT_NEAR(r.rmse, std::sqrt((9 + 4 + 1) / 3.0), 1e-12);
}

TEST(Metrics, EmptyAndMismatchedInputsRejected) {
  EXPECT_THROW(compute_metrics(Matrix(0, 1), Matrix(0, 1), labels(1), 1), ConfigError);
  EXPECT_THROW(compute_metrics(Matrix(2, 1), Matrix(3, 1), labels(1), 1), DimensionError);
}

TEST(Metrics, RegionOrderInvariance) {
  Rng rng(3);
  Matrix p = random_matrix(rng, 30, 4), t = random_matrix(rng, 30, 4);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Matrix pp(30, 4), tp(30, 4);
  for (std::size_t s = 0; s < 30; ++s)
    for (std::size_t r = 0; r < 4; ++r) {
      pp(s, r) = p(s, perm[r]);
      tp(s, r) = t(s, perm[r]);
    }
  for (PccMode mode : {PccMode::pooled, PccMode::per_region_mean}) {
    auto a = compute_metrics(p, t, labels(4), 1, mode);
    auto b = compute_metrics(pp, tp, labels(4), 1, mode);
    EXPECT_NEAR(a.rmse, b.rmse, 1e-12);
    EXPECT_NEAR(*a.pcc, *b.pcc, 1e-12);
  }
}

TEST(Metrics, PccAffineInvariantRmseNot) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix p = random_matrix(rng, 25, 3), t = random_matrix(rng, 25, 3);
    const double a = rng.uniform(0.1, 5.0), b = rng.uniform(-10.0, 10.0);
    Matrix q = p;
    for (double& v : q.data) v = a * v + b;
    auto r1 = compute_metrics(p, t, labels(3), 1);
    auto r2 = compute_metrics(q, t, labels(3), 1);
    EXPECT_NEAR(*r1.pcc, *r2.pcc, 1e-12);
    EXPECT_GT(std::abs(r1.rmse - r2.rmse), 1e-6);
    EXPECT_GE(*r1.pcc, -1.0);
    EXPECT_LE(*r1.pcc, 1.0);
  }
}

TEST(Metrics, PerRegionMeanMode) {
  Matrix p(3, 2), t(3, 2);
  p.data = {1, 3, 2, 2, 3, 1};
  t.data = {1, 1, 2, 2, 3, 3};
  auto r = compute_metrics(p, t, labels(2), 1, PccMode::per_region_mean);
  EXPECT_NEAR(*r.pcc, 0.0, 1e-12);  // +1 and -1
  ASSERT_EQ(r.per_region.size(), 2u);
  EXPECT_NEAR(*r.per_region[1].pcc, -1.0, 1e-12);
}

TEST(Evaluate, DenormalizesPredictionsAgainstRawCounts) {
  EpidemicSeries raw;
  raw.regions = {"a"};
  raw.counts = Matrix(1, 6);
  raw.counts.data = {10, 20, 30, 40, 50, 60};
  NormStats stats{NormMode::per_region, {10}, {60}};
  Matrix norm = apply_normalization(raw.counts, stats);
  auto samples = windows_of(norm, 2, 1);
  auto r = evaluate([](const Matrix& w) { return std::vector<double>{w(0, 1)}; }, samples, stats, raw, 1);
  EXPECT_NEAR(r.rmse, 10.0, 1e-9);
  EXPECT_NEAR(*r.pcc, 1.0, 1e-12);
  EXPECT_EQ(r.samples, 4u);
}

TEST(FitAr, RecoversNoiselessAr1) {
  Matrix x(1, 80);
  x(0, 0) = 1.0;
  for (std::size_t t = 1; t < 80; ++t) x(0, t) = 0.9 * x(0, t - 1);
  auto samples = windows_of(x, 5, 1);
  std::span<const WindowSample> all(samples);
  auto train = all.first(40), test = all.subspan(40);
  LinearBaseline m = fit_ar(train, 1);
  EXPECT_NEAR(m.coef(0, 0), 0.9, 1e-6);
  EXPECT_LT(rmse_normalized(m.forecaster(), test), 1e-6);
}

TEST(FitAr, ConstantSeriesPredictsConstant) {
  Matrix x(2, 40, 7.0);
  for (std::size_t t = 0; t < 40; ++t) x(1, t) = 2.5;
  auto samples = windows_of(x, 4, 2);
  LinearBaseline m = fit_ar(samples, 3);
  EXPECT_NEAR(m.intercept[0], 7.0, 1e-9);
  auto pred = m.predict(samples.front().input);
  EXPECT_NEAR(pred[0], 7.0, 1e-9);
  EXPECT_NEAR(pred[1], 2.5, 1e-9);
}

TEST(FitAr, RandomWalkUnitCoefficient) {
  Rng rng(21);
  Matrix x(1, 2000);
  for (std::size_t t = 1; t < 2000; ++t) x(0, t) = x(0, t - 1) + rng.normal();
  LinearBaseline m = fit_ar(windows_of(x, 1, 1), 1);
  EXPECT_NEAR(m.coef(0, 0), 1.0, 0.1);
}

TEST(FitAr, UnderdeterminedStatesSampleCount) {
  Matrix x(1, 8);
  for (std::size_t t = 0; t < 8; ++t) x(0, t) = t * t;
  auto samples = windows_of(x, 5, 1);  // 3 samples
  try {
    fit_ar(samples, 5);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("3 samples"), std::string::npos) << e.what();
  }
  EXPECT_THROW(fit_ar(samples, 0), ConfigError);
}

TEST(FitLridge, ZeroLambdaMatchesOrdinaryLeastSquares) {
  Rng rng(5);
  Matrix x(40, 3);
  std::vector<double> y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t j = 0; j < 3; ++j) x(i, j) = rng.normal();
    y[i] = 1.5 + 2 * x(i, 0) - x(i, 1) + 0.5 * x(i, 2) + 0.01 * rng.normal();
  }
  RidgeFit fit = fit_ridge(x, y, 0.0);
  // Normal equations of the augmented design [1 x] solved by hand.
  long double a[4][5] = {};
  for (std::size_t i = 0; i < 40; ++i) {
    const long double row[4] = {1, x(i, 0), x(i, 1), x(i, 2)};
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) a[r][c] += row[r] * row[c];
      a[r][4] += row[r] * y[i];
    }
  }
  for (int p = 0; p < 4; ++p)
    for (int r = 0; r < 4; ++r) {
      if (r == p) continue;
      const long double f = a[r][p] / a[p][p];
      for (int c = 0; c < 5; ++c) a[r][c] -= f * a[p][c];
    }
  EXPECT_NEAR(fit.intercept, static_cast<double>(a[0][4] / a[0][0]), 1e-10);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(fit.coef[j], static_cast<double>(a[j + 1][4] / a[j + 1][j + 1]), 1e-10);
}

TEST(FitLridge, LargeLambdaShrinksMonotonically) {
  Rng rng(6);
  Matrix series(2, 120);
  for (std::size_t t = 0; t < 120; ++t) {
    series(0, t) = std::sin(t * 0.3) + 0.1 * rng.normal();
    series(1, t) = std::cos(t * 0.2) + 0.1 * rng.normal();
  }
  auto samples = windows_of(series, 4, 1);
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {0.0, 0.1, 10.0, 1e3, 1e6}) {
    LinearBaseline m = fit_lridge(samples, 4, lambda);
    double norm = 0;
    for (double c : m.coef.data) norm += c * c;
    EXPECT_LT(norm, prev) << lambda;
    prev = norm;
  }
  EXPECT_LT(std::sqrt(prev), 1e-3);
  LinearBaseline big = fit_lridge(samples, 4, 1e6);
  double mean0 = 0;
  for (const auto& s : samples) mean0 += s.target[0] / samples.size();
  EXPECT_NEAR(big.predict(samples[10].input)[0], mean0, 1e-3);
}

TEST(FitLridge, LagCoupledPairIsExact) {
  Rng rng(7);
  Matrix series(2, 200);
  std::vector<double> base(202);
  for (double& v : base) v = rng.normal();
  for (std::size_t t = 0; t < 200; ++t) {
    series(0, t) = base[t + 2];
    series(1, t) = base[t];  // x2(t) = x1(t - 2)
  }
  auto samples = windows_of(series, 5, 2);
  std::span<const WindowSample> all(samples);
  LinearBaseline m = fit_lridge(all.first(120), 2, 0.0);
  std::vector<double> err;
  double se = 0;
  auto test = all.subspan(120);
  for (const auto& s : test) {
    const double e = m.predict(s.input)[1] - s.target[1];
    se += e * e;
  }
  EXPECT_LT(std::sqrt(se / test.size()), 1e-6);
}

TEST(SelectLridge, PicksLowestValidationError) {
  Rng rng(8);
  Matrix series(3, 150);
  for (double& v : series.data) v = rng.normal();
  auto samples = windows_of(series, 6, 1);
  std::span<const WindowSample> all(samples);
  auto sel = select_lridge(all.first(60), all.subspan(60, 40), 6);
  ASSERT_EQ(sel.validation.size(), 4u);
  double best = std::numeric_limits<double>::infinity();
  double best_lambda = 0;
  for (auto [lambda, err] : sel.validation) {
    EXPECT_TRUE(std::isfinite(err));
    if (err < best) {
      best = err;
      best_lambda = lambda;
    }
  }
  EXPECT_EQ(sel.model.lambda, best_lambda);
  EXPECT_EQ(rmse_normalized(sel.model.forecaster(), all.subspan(60, 40)), best);
}

TEST(Persistence, RepeatsLastObservation) {
  Matrix w(2, 3);
  w.data = {1, 2, 3, 4, 5, 6};
  EXPECT_EQ(persistence(w), (std::vector<double>{3, 6}));
}

}  // namespace
}  // namespace epi
