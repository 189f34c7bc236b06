#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "epiforecast/errors.h"
#include "epiforecast/data.h"
#include "epiforecast/rng.h"

namespace epi {
namespace {

EpidemicSeries parse(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in, "test.csv");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

EpidemicSeries random_series(std::size_t n, std::size_t len, std::uint64_t seed, double scale = 100.0) {
  Rng rng(seed);
  EpidemicSeries s;
  for (std::size_t r = 0; r < n; ++r) s.regions.push_back("r" + std::to_string(r));
  for (std::size_t t = 0; t < len; ++t) s.times.push_back(std::to_string(t));
  s.counts = Matrix(n, len);
  for (double& v : s.counts.data) v = std::floor(rng.uniform(0.0, scale));
  return s;
}

TEST(LoadCsv, SingleCell) {
  EpidemicSeries s = parse("r1\n5");
  EXPECT_EQ(s.num_regions(), 1u);
  EXPECT_EQ(s.length(), 1u);
  EXPECT_EQ(s.counts(0, 0), 5.0);
  EXPECT_EQ(s.regions[0], "r1");
}

TEST(LoadCsv, TimeColumnAndCrlf) {
  EpidemicSeries s = parse("date,a,b\r\n2020-01-01,1,2.5\r\n2020-01-08,3,4\r\n\r\n");
  EXPECT_EQ(s.regions, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(s.times, (std::vector<std::string>{"2020-01-01", "2020-01-08"}));
  EXPECT_EQ(s.counts(1, 0), 2.5);
  EXPECT_EQ(s.counts(0, 1), 3.0);
}

TEST(LoadCsv, ErrorsNameTheRow) {
  EXPECT_NE(error_of("a,b\n1,2\n3\n").find("row 3"), std::string::npos);
  EXPECT_NE(error_of("a,b\n1,2\n3,x\n").find("row 3"), std::string::npos);
  EXPECT_NE(error_of("a,b\n1,-2\n").find("row 2: negative"), std::string::npos);
  EXPECT_NE(error_of("a,b\n1,nan\n").find("non-numeric"), std::string::npos);
  EXPECT_NE(error_of("a,a\n1,2\n").find("duplicate"), std::string::npos);
  EXPECT_NE(error_of("").find("empty file"), std::string::npos);
  EXPECT_NE(error_of("a,b\n").find("no data rows"), std::string::npos);
}

TEST(LoadCsv, MissingFile) { EXPECT_THROW(load_csv("/nonexistent/file.csv"), DataError); }

// The public datasets are N x L count grids; check the loader on files of
// the same layouts (47 x 348 peaking at 26635, 10 x 785 peaking at 16526).
TEST(LoadCsv, DatasetLayouts) {
  struct Layout {
    std::size_t n, len;
    double max;
  };
  for (const Layout& layout : {Layout{47, 348, 26635}, Layout{10, 785, 16526}}) {
    EpidemicSeries s = random_series(layout.n, layout.len, 3, 1000.0);
    s.counts(layout.n / 2, layout.len / 3) = layout.max;
    auto path = std::filesystem::temp_directory_path() / "epi_layout.csv";
    write_csv(s, path);
    EpidemicSeries back = load_csv(path);
    EXPECT_EQ(back.num_regions(), layout.n);
    EXPECT_EQ(back.length(), layout.len);
    EXPECT_EQ(*std::max_element(back.counts.data.begin(), back.counts.data.end()), layout.max);
    EXPECT_EQ(back.counts, s.counts);
    std::filesystem::remove(path);
  }
}

TEST(Split, FloorsTrainAndValidation) {
  SplitSpec s = SplitSpec::make(785);
  EXPECT_EQ(s.train_end, 392u);
  EXPECT_EQ(s.val_end, 392u + 157u);
  SplitSpec t = SplitSpec::make(35);
  EXPECT_EQ(t.train_end, 17u);
  EXPECT_EQ(t.val_end, 24u);
  EXPECT_THROW(SplitSpec::make(10, {0.5, 0.5, 0.5}), ConfigError);
}

TEST(Split, BoundariesPartitionForAllLengths) {
  for (std::size_t L = 1; L < 400; ++L) {
    SplitSpec s = SplitSpec::make(L);
    EXPECT_LE(s.train_end, s.val_end);
    EXPECT_LE(s.val_end, L);
  }
}

TEST(Normalize, Arithmetic) {
  EpidemicSeries s;
  s.regions = {"a", "b"};
  s.counts = Matrix(2, 4);
  // a: train span [0, 200], then 50
  s.counts.row(0)[0] = 0;
  s.counts.row(0)[1] = 200;
  s.counts.row(0)[2] = 50;
  s.counts.row(0)[3] = 400;
  for (double& v : s.counts.row(1)) v = 7;  // constant region
  SplitSpec split = SplitSpec::make(4, {0.5, 0.25, 0.25});
  Normalized n = normalize(s, split, NormMode::per_region);
  EXPECT_DOUBLE_EQ(n.values(0, 2), 0.25);
  EXPECT_DOUBLE_EQ(n.values(0, 3), 2.0);  // test values may exceed 1
  for (double v : n.values.row(1)) EXPECT_EQ(v, 0.0);
}

TEST(Normalize, DenormalizeEndpoints) {
  NormStats stats;
  stats.min = {10, 0, 5};
  stats.max = {30, 4, 9};
  auto v = denormalize(std::vector<double>{0.5, 0.0, 1.0}, stats);
  EXPECT_DOUBLE_EQ(v[0], 20.0);
  EXPECT_DOUBLE_EQ(v[1], 0.0);
  EXPECT_DOUBLE_EQ(v[2], 9.0);
}

TEST(Normalize, RoundTrip) {
  for (NormMode mode : {NormMode::per_region, NormMode::global}) {
    EpidemicSeries s = random_series(5, 60, 9);
    SplitSpec split = SplitSpec::make(60);
    Normalized n = normalize(s, split, mode);
    for (std::size_t t = 0; t < 60; ++t) {
      std::vector<double> col(5);
      for (std::size_t r = 0; r < 5; ++r) col[r] = n.values(r, t);
      auto back = denormalize(col, n.stats);
      for (std::size_t r = 0; r < 5; ++r) EXPECT_NEAR(back[r], s.counts(r, t), 1e-9);
    }
  }
}

TEST(Normalize, GlobalModeSharesRange) {
  EpidemicSeries s = random_series(3, 20, 4);
  s.counts(2, 0) = 1000;
  Normalized n = normalize(s, SplitSpec::make(20), NormMode::global);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(n.stats.max[r], 1000);
    EXPECT_EQ(n.stats.min[r], n.stats.min[0]);
  }
}

TEST(Normalize, StatsIgnoreTestSpan) {
  // Leakage canary: a spike in the test span must not move the statistics.
  EpidemicSeries s = random_series(2, 100, 5);
  SplitSpec split = SplitSpec::make(100);
  s.counts(0, 90) = 1e6;
  NormStats train_only = normalize(s, split, NormMode::per_region).stats;
  NormStats full = fit_norm_stats(s.counts, 100, NormMode::per_region);
  EXPECT_NE(train_only.max[0], full.max[0]);
  EXPECT_LT(train_only.max[0], 100.0);
}

TEST(Windows, CountsAndFirstTarget) {
  EpidemicSeries s = random_series(3, 348, 6);
  PreparedData d = prepare(s, 20, 3, {}, NormMode::per_region);
  EXPECT_EQ(d.windows.total(), 326u);
  EXPECT_EQ(d.windows.train.front().target_index, 22u);
  EXPECT_EQ(d.windows.train.front().t, 19u);
}

TEST(Windows, ExactlyOneSampleAtMinimumLength) {
  EpidemicSeries s = random_series(2, 23, 7);
  SplitSpec split = SplitSpec::make(23, {0.0, 0.0, 1.0});
  auto w = make_windows(normalize(s, SplitSpec::make(23), NormMode::per_region).values, 20, 3, split);
  EXPECT_EQ(w.total(), 1u);
  EXPECT_THROW(make_windows(Matrix(2, 22), 20, 3, SplitSpec::make(22)), ConfigError);
}

TEST(Windows, MembershipAndContents) {
  for (std::size_t L : {60u, 101u, 785u}) {
    EpidemicSeries s = random_series(4, L, L);
    PreparedData d = prepare(s, 20, 5, {}, NormMode::per_region);
    const auto& w = d.windows;
    EXPECT_EQ(w.total(), L - 20 - 5 + 1);
    for (const auto& x : w.train) EXPECT_LT(x.target_index, d.split.train_end);
    for (const auto& x : w.val) {
      EXPECT_GE(x.target_index, d.split.train_end);
      EXPECT_LT(x.target_index, d.split.val_end);
    }
    for (const auto& x : w.test) EXPECT_GE(x.target_index, d.split.val_end);
    if (!w.train.empty() && !w.test.empty()) EXPECT_LT(w.train.back().target_index, w.test.front().target_index);
    for (const auto& x : w.train)
      for (double v : x.input.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    const auto& probe = w.test.back();
    EXPECT_EQ(probe.input(2, 19), d.normalized(2, probe.t));
    EXPECT_EQ(probe.input(2, 0), d.normalized(2, probe.t - 19));
    EXPECT_EQ(probe.target[3], d.normalized(3, probe.t + 5));
  }
}

TEST(Windows, LatestWindowNeedsHistory) {
  Matrix m(2, 5, 1.0);
  EXPECT_EQ(latest_window(m, 5).cols, 5u);
  try {
    latest_window(m, 6);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("T = 6"), std::string::npos);
  }
}

}  // namespace
}  // namespace epi
