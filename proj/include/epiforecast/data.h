#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "epiforecast/matrix.h"

namespace epi {

// Case counts for N regions over L time steps.
struct EpidemicSeries {
  std::vector<std::string> regions;
  std::vector<std::string> times;
  Matrix counts;  // N x L, all entries finite and >= 0

  std::size_t num_regions() const { return counts.rows; }
  std::size_t length() const { return counts.cols; }
};

// Header row of region labels, then one row per time step. A leading column
// headed "date", "time", "week" or "epiweek" is taken as the time label.
EpidemicSeries load_csv(const std::filesystem::path& path);
EpidemicSeries parse_csv(std::istream& in, std::string_view source = "<stream>");
void write_csv(const EpidemicSeries& series, const std::filesystem::path& path);

enum class NormMode { per_region, global };
NormMode parse_norm_mode(std::string_view name);
std::string to_string(NormMode mode);

struct SplitRatios {
  double train = 0.5;
  double val = 0.2;
  double test = 0.3;
};

enum class SplitPart { train, val, test };

// Chronological split of [0, L): train gets floor(train*L) steps, validation
// the next floor(val*L), test the rest.
struct SplitSpec {
  SplitRatios ratios;
  std::size_t length = 0;
  std::size_t train_end = 0;
  std::size_t val_end = 0;

  static SplitSpec make(std::size_t length, SplitRatios ratios = {});
  SplitPart part_of(std::size_t index) const;
};

// Min-max statistics from the training span. In global mode every region
// carries the same range.
struct NormStats {
  NormMode mode = NormMode::per_region;
  std::vector<double> min;
  std::vector<double> max;

  double normalize(std::size_t region, double value) const;
  double denormalize(std::size_t region, double value) const;
};

NormStats fit_norm_stats(const Matrix& counts, std::size_t train_end, NormMode mode);
Matrix apply_normalization(const Matrix& counts, const NormStats& stats);

struct Normalized {
  Matrix values;
  NormStats stats;
};

Normalized normalize(const EpidemicSeries& series, const SplitSpec& split, NormMode mode);

// One value per region back to the original scale.
std::vector<double> denormalize(std::span<const double> values, const NormStats& stats);

// Input block ending at time t and the target at t + h.
struct WindowSample {
  Matrix input;                // N x T, columns t-T+1 .. t
  std::vector<double> target;  // length N, time t + h
  std::size_t t = 0;
  std::size_t target_index = 0;
};

struct WindowedSplits {
  std::size_t window = 0;
  std::size_t horizon = 0;
  std::vector<WindowSample> train;
  std::vector<WindowSample> val;
  std::vector<WindowSample> test;

  std::size_t total() const { return train.size() + val.size() + test.size(); }
};

// Every anchor t with a full window and an in-range target; each sample goes
// to the split that contains its target index.
WindowedSplits make_windows(const Matrix& normalized, std::size_t window, std::size_t horizon,
                            const SplitSpec& split);

// The window ending at the last observed time step.
Matrix latest_window(const Matrix& normalized, std::size_t window);

// Everything downstream code needs from one series under one configuration.
struct PreparedData {
  EpidemicSeries raw;
  SplitSpec split;
  NormStats stats;
  Matrix normalized;
  WindowedSplits windows;
};

PreparedData prepare(EpidemicSeries raw, std::size_t window, std::size_t horizon, SplitRatios ratios,
                     NormMode mode);

}  // namespace epi
