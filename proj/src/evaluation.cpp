#include "epiforecast/evaluation.h"

#include <algorithm>
#include <cmath>

#include "epiforecast/errors.h"

namespace epi {

PccMode parse_pcc_mode(std::string_view name) {
  if (name == "pooled") return PccMode::pooled;
  if (name == "per-region") return PccMode::per_region_mean;
  throw ConfigError("unknown pcc mode '" + std::string(name) + "' (expected pooled or per-region)");
}

std::string to_string(PccMode mode) { return mode == PccMode::pooled ? "pooled" : "per-region"; }

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("pearson: length mismatch");
  if (a.empty()) return std::nullopt;
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0 || sbb == 0) return std::nullopt;
  const double r = static_cast<double>(sab / std::sqrt(saa * sbb));
  return std::clamp(r, -1.0, 1.0);
}

EvalResult compute_metrics(const Matrix& pred, const Matrix& truth, const std::vector<std::string>& regions,
                           std::size_t horizon, PccMode mode) {
  if (pred.rows != truth.rows || pred.cols != truth.cols) {
    throw DimensionError("compute_metrics: predictions and truth differ in shape");
  }
  if (pred.rows == 0 || pred.cols == 0) throw ConfigError("compute_metrics: empty test set");
  if (regions.size() != pred.cols) throw DimensionError("compute_metrics: region labels do not match columns");

  EvalResult out;
  out.horizon = horizon;
  out.samples = pred.rows;
  out.pcc_mode = mode;

  long double total = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const long double e = pred.data[i] - truth.data[i];
    total += e * e;
  }
  out.rmse = static_cast<double>(std::sqrt(total / pred.data.size()));

  std::vector<double> p(pred.rows), t(pred.rows);
  double pcc_sum = 0.0;
  std::size_t pcc_count = 0;
  for (std::size_t r = 0; r < pred.cols; ++r) {
    long double se = 0;
    for (std::size_t s = 0; s < pred.rows; ++s) {
      p[s] = pred(s, r);
      t[s] = truth(s, r);
      se += (p[s] - t[s]) * static_cast<long double>(p[s] - t[s]);
    }
    RegionMetrics m{regions[r], static_cast<double>(std::sqrt(se / pred.rows)), pearson(p, t)};
    if (m.pcc) {
      pcc_sum += *m.pcc;
      ++pcc_count;
    }
    out.per_region.push_back(std::move(m));
  }

  if (mode == PccMode::pooled) {
    out.pcc = pearson(pred.data, truth.data);
    if (!out.pcc) out.pcc_error = "pcc undefined: pooled predictions or truth have zero variance";
  } else if (pcc_count > 0) {
    out.pcc = pcc_sum / static_cast<double>(pcc_count);
  } else {
    out.pcc_error = "pcc undefined: every region has zero variance";
  }
  return out;
}

EvalResult evaluate(const Forecaster& forecaster, std::span<const WindowSample> samples, const NormStats& stats,
                    const EpidemicSeries& raw, std::size_t horizon, PccMode mode) {
  if (samples.empty()) throw ConfigError("evaluate: empty test set");
  const std::size_t N = raw.counts.rows;
  Matrix pred(samples.size(), N), truth(samples.size(), N);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto out = forecaster(samples[s].input);
    if (out.size() != N) throw DimensionError("evaluate: forecaster returned the wrong number of regions");
    for (std::size_t r = 0; r < N; ++r) {
      pred(s, r) = stats.denormalize(r, out[r]);
      truth(s, r) = raw.counts(r, samples[s].target_index);
    }
  }
  return compute_metrics(pred, truth, raw.regions, horizon, mode);
}

}  // namespace epi
