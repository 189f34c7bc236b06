#include "epiforecast/data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "epiforecast/errors.h"

namespace epi {
namespace {

std::string_view trim(std::string_view s) {
  const auto not_space = [](char c) { return c != ' ' && c != '\t' && c != '\r' && c != '\n'; };
  while (!s.empty() && !not_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && !not_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

bool is_time_header(std::string_view cell) {
  std::string lower(cell);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  return lower == "date" || lower == "time" || lower == "week" || lower == "epiweek";
}

std::string row_prefix(std::string_view source, std::size_t line) {
  return std::string(source) + ": row " + std::to_string(line) + ": ";
}

}  // namespace

EpidemicSeries parse_csv(std::istream& in, std::string_view source) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string_view> header;
  std::string header_line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (!trim(line).empty()) {
      header_line = line;
      break;
    }
  }
  if (header_line.empty()) throw DataError(std::string(source) + ": empty file, expected a header of region labels");
  header = split_commas(header_line);
  const bool has_time = is_time_header(header.front());
  const std::size_t first_region = has_time ? 1 : 0;

  EpidemicSeries series;
  std::set<std::string> seen;
  for (std::size_t c = first_region; c < header.size(); ++c) {
    if (header[c].empty()) throw DataError(row_prefix(source, line_no) + "empty region label in column " + std::to_string(c + 1));
    if (!seen.emplace(header[c]).second) {
      throw DataError(row_prefix(source, line_no) + "duplicate region label '" + std::string(header[c]) + "'");
    }
    series.regions.emplace_back(header[c]);
  }
  if (series.regions.empty()) throw DataError(row_prefix(source, line_no) + "header has no region columns");

  const std::size_t width = header.size();
  const std::size_t n = series.regions.size();
  std::vector<std::vector<double>> columns;  // one entry per time step
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != width) {
      throw DataError(row_prefix(source, line_no) + "expected " + std::to_string(width) + " cells, found " +
                      std::to_string(cells.size()));
    }
    std::vector<double> step(n);
    for (std::size_t c = first_region; c < width; ++c) {
      const std::string_view cell = cells[c];
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
        throw DataError(row_prefix(source, line_no) + "non-numeric value '" + std::string(cell) + "' for region '" +
                        series.regions[c - first_region] + "'");
      }
      if (value < 0.0) {
        throw DataError(row_prefix(source, line_no) + "negative count " + std::string(cell) + " for region '" +
                        series.regions[c - first_region] + "'");
      }
      step[c - first_region] = value;
    }
    series.times.emplace_back(has_time ? std::string(cells[0]) : std::to_string(columns.size()));
    columns.push_back(std::move(step));
  }
  if (columns.empty()) throw DataError(std::string(source) + ": no data rows after the header");

  series.counts = Matrix(n, columns.size());
  for (std::size_t t = 0; t < columns.size(); ++t)
    for (std::size_t r = 0; r < n; ++r) series.counts(r, t) = columns[t][r];
  return series;
}

EpidemicSeries load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path.string() + "'");
  return parse_csv(in, path.string());
}

void write_csv(const EpidemicSeries& series, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "date";
  for (const auto& r : series.regions) out << ',' << r;
  out << '\n';
  char buf[64];
  for (std::size_t t = 0; t < series.length(); ++t) {
    out << (t < series.times.size() ? series.times[t] : std::to_string(t));
    for (std::size_t r = 0; r < series.num_regions(); ++r) {
      const auto res = std::to_chars(buf, buf + sizeof buf, series.counts(r, t));
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
}

NormMode parse_norm_mode(std::string_view name) {
  if (name == "per-region") return NormMode::per_region;
  if (name == "global") return NormMode::global;
  throw ConfigError("unknown normalization mode '" + std::string(name) + "' (expected per-region or global)");
}

std::string to_string(NormMode mode) { return mode == NormMode::global ? "global" : "per-region"; }

SplitSpec SplitSpec::make(std::size_t length, SplitRatios ratios) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  SplitSpec s;
  s.ratios = ratios;
  s.length = length;
  // The small offset keeps products like 0.2 * 35 = 7.000000000000001 (or
  // 6.9999999999) from flipping the floor.
  s.train_end = std::min(length, static_cast<std::size_t>(std::floor(ratios.train * static_cast<double>(length) + 1e-9)));
  s.val_end = std::min(length, s.train_end + static_cast<std::size_t>(std::floor(ratios.val * static_cast<double>(length) + 1e-9)));
  return s;
}

SplitPart SplitSpec::part_of(std::size_t index) const {
  if (index < train_end) return SplitPart::train;
  if (index < val_end) return SplitPart::val;
  return SplitPart::test;
}

double NormStats::normalize(std::size_t region, double value) const {
  const double range = max[region] - min[region];
  return range > 0.0 ? (value - min[region]) / range : 0.0;
}

double NormStats::denormalize(std::size_t region, double value) const {
  return value * (max[region] - min[region]) + min[region];
}

NormStats fit_norm_stats(const Matrix& counts, std::size_t train_end, NormMode mode) {
  if (train_end == 0 || train_end > counts.cols) {
    throw ConfigError("normalization needs a non-empty training span (got " + std::to_string(train_end) +
                      " of " + std::to_string(counts.cols) + " steps)");
  }
  NormStats stats;
  stats.mode = mode;
  stats.min.resize(counts.rows);
  stats.max.resize(counts.rows);
  for (std::size_t r = 0; r < counts.rows; ++r) {
    const auto row = counts.row(r).first(train_end);
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    stats.min[r] = *lo;
    stats.max[r] = *hi;
  }
  if (mode == NormMode::global) {
    const double lo = *std::min_element(stats.min.begin(), stats.min.end());
    const double hi = *std::max_element(stats.max.begin(), stats.max.end());
    std::fill(stats.min.begin(), stats.min.end(), lo);
    std::fill(stats.max.begin(), stats.max.end(), hi);
  }
  return stats;
}

Matrix apply_normalization(const Matrix& counts, const NormStats& stats) {
  Matrix out(counts.rows, counts.cols);
  for (std::size_t r = 0; r < counts.rows; ++r)
    for (std::size_t t = 0; t < counts.cols; ++t) out(r, t) = stats.normalize(r, counts(r, t));
  return out;
}

Normalized normalize(const EpidemicSeries& series, const SplitSpec& split, NormMode mode) {
  Normalized out;
  out.stats = fit_norm_stats(series.counts, split.train_end, mode);
  out.values = apply_normalization(series.counts, out.stats);
  return out;
}

std::vector<double> denormalize(std::span<const double> values, const NormStats& stats) {
  if (values.size() != stats.min.size()) {
    throw DimensionError("denormalize: " + std::to_string(values.size()) + " values for " +
                         std::to_string(stats.min.size()) + " regions");
  }
  std::vector<double> out(values.size());
  for (std::size_t r = 0; r < values.size(); ++r) out[r] = stats.denormalize(r, values[r]);
  return out;
}

WindowedSplits make_windows(const Matrix& normalized, std::size_t window, std::size_t horizon,
                            const SplitSpec& split) {
  const std::size_t L = normalized.cols;
  const std::size_t N = normalized.rows;
  if (window == 0 || horizon == 0) throw ConfigError("window and horizon must be positive");
  if (L < window + horizon) {
    throw ConfigError("series of length " + std::to_string(L) + " is too short: window " + std::to_string(window) +
                      " + horizon " + std::to_string(horizon) + " needs at least " + std::to_string(window + horizon) +
                      " time steps");
  }
  if (split.length != L) throw ConfigError("split was computed for a different series length");
  WindowedSplits out;
  out.window = window;
  out.horizon = horizon;
  for (std::size_t t = window - 1; t + horizon < L; ++t) {
    WindowSample s;
    s.t = t;
    s.target_index = t + horizon;
    s.input = Matrix(N, window);
    s.target.resize(N);
    for (std::size_t r = 0; r < N; ++r) {
      for (std::size_t j = 0; j < window; ++j) s.input(r, j) = normalized(r, t + 1 - window + j);
      s.target[r] = normalized(r, s.target_index);
    }
    switch (split.part_of(s.target_index)) {
      case SplitPart::train: out.train.push_back(std::move(s)); break;
      case SplitPart::val: out.val.push_back(std::move(s)); break;
      case SplitPart::test: out.test.push_back(std::move(s)); break;
    }
  }
  return out;
}

Matrix latest_window(const Matrix& normalized, std::size_t window) {
  if (normalized.cols < window) {
    throw DataError("need at least T = " + std::to_string(window) + " trailing observations, data has " +
                    std::to_string(normalized.cols));
  }
  Matrix out(normalized.rows, window);
  const std::size_t start = normalized.cols - window;
  for (std::size_t r = 0; r < normalized.rows; ++r)
    for (std::size_t j = 0; j < window; ++j) out(r, j) = normalized(r, start + j);
  return out;
}

PreparedData prepare(EpidemicSeries raw, std::size_t window, std::size_t horizon, SplitRatios ratios,
                     NormMode mode) {
  PreparedData d;
  d.split = SplitSpec::make(raw.length(), ratios);
  Normalized n = normalize(raw, d.split, mode);
  d.stats = std::move(n.stats);
  d.normalized = std::move(n.values);
  d.windows = make_windows(d.normalized, window, horizon, d.split);
  d.raw = std::move(raw);
  return d;
}

}  // namespace epi
