#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "epiforecast/cli.h"
#include "epiforecast/serialization.h"
#include "synthetic.h"

namespace epi {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "epiforecast");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("epiforecast-cli-") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    data_ = dir_ / "cases.csv";
    write_csv(testing::lagged_sinusoids(3, 120, 0.05, 4), data_);
    config_ = dir_ / "config.json";
    std::ofstream(config_) << R"({"window": 12, "horizon": 2, "lstm_hidden": 4, "attn_dim": 4, "filters": 2,)"
                           << R"( "pool": 1, "ar_window": 4, "max_epochs": 4, "batch_size": 16, "seed": 7})";
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliRun train(const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"train", "--config", config_.string(), "--data", data_.string(), "--out",
                                  (dir_ / out).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args);
  }

  fs::path dir_, data_, config_;
};

TEST_F(CliTest, TrainWritesAllArtifacts) {
  CliRun r = train("run");
  ASSERT_EQ(r.code, kExitOk) << r.err;
  for (const char* name : {"checkpoint.json", "report.json", "epochs.csv", "effective-config.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run" / name)) << name;
  }
  const json report = read_json(dir_ / "run" / "report.json");
  EXPECT_FALSE(report.at("train").contains("wall_seconds"));
  EXPECT_EQ(count_lines(slurp(dir_ / "run" / "epochs.csv")), 1 + report.at("train").at("epochs").size());
}

TEST_F(CliTest, MissingDataIsUsageError) {
  CliRun r = cli({"train", "--out", (dir_ / "x").string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("--data"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "x"));
}

TEST_F(CliTest, UnknownSubcommandAndFlagAreUsageErrors) {
  EXPECT_EQ(cli({"fly"}).code, kExitUsage);
  EXPECT_EQ(cli({"train", "--bogus", "1"}).code, kExitUsage);
  EXPECT_EQ(cli({}).code, kExitUsage);
}

TEST_F(CliTest, UnknownConfigKeyIsRejected) {
  std::ofstream(dir_ / "bad.json") << R"({"window": 12, "learning_rate": 0.1})";
  CliRun r = cli({"train", "--config", (dir_ / "bad.json").string(), "--data", data_.string(), "--out",
               (dir_ / "run").string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;
}

TEST_F(CliTest, MalformedConfigAndMissingFilesFailCleanly) {
  std::ofstream(dir_ / "broken.json") << "{\"window\": ";
  EXPECT_EQ(cli({"train", "--config", (dir_ / "broken.json").string(), "--data", data_.string(), "--out",
                 (dir_ / "a").string()})
                .code,
            kExitUsage);
  CliRun r = cli({"train", "--config", config_.string(), "--data", (dir_ / "nope.csv").string(), "--out",
                  (dir_ / "b").string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("nope.csv"), std::string::npos) << r.err;
}

TEST_F(CliTest, FlagsOverrideConfigFile) {
  ASSERT_EQ(train("run", {"--window", "10", "--lr", "0.02"}).code, kExitOk);
  const json eff = read_json(dir_ / "run" / "effective-config.json");
  EXPECT_EQ(eff.at("window").get<int>(), 10);
  EXPECT_EQ(eff.at("lr").get<double>(), 0.02);
  EXPECT_EQ(eff.at("filters").get<int>(), 2);
}

TEST_F(CliTest, SameSeedGivesByteIdenticalOutputs) {
  ASSERT_EQ(train("a").code, kExitOk);
  ASSERT_EQ(train("b").code, kExitOk);
  EXPECT_EQ(slurp(dir_ / "a" / "report.json"), slurp(dir_ / "b" / "report.json"));
  EXPECT_EQ(slurp(dir_ / "a" / "checkpoint.json"), slurp(dir_ / "b" / "checkpoint.json"));
  EXPECT_EQ(slurp(dir_ / "a" / "epochs.csv"), slurp(dir_ / "b" / "epochs.csv"));
}

TEST_F(CliTest, EffectiveConfigReproducesRun) {
  ASSERT_EQ(train("a").code, kExitOk);
  const fs::path echoed = dir_ / "a" / "effective-config.json";
  CliRun r = cli({"train", "--config", echoed.string(), "--out", (dir_ / "b").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(slurp(dir_ / "a" / "report.json"), slurp(dir_ / "b" / "report.json"));
  EXPECT_EQ(slurp(dir_ / "a" / "checkpoint.json"), slurp(dir_ / "b" / "checkpoint.json"));
}

TEST_F(CliTest, SeedFallsBackToEnvironment) {
  std::ofstream(dir_ / "noseed.json") << R"({"window": 12, "horizon": 2, "lstm_hidden": 4, "attn_dim": 4,)"
                                      << R"( "filters": 2, "pool": 1, "ar_window": 4, "max_epochs": 2})";
  auto run = [&](const std::string& out) {
    return cli({"train", "--config", (dir_ / "noseed.json").string(), "--data", data_.string(), "--out",
                (dir_ / out).string()});
  };
  ::setenv("EPIFORECAST_SEED", "31", 1);
  CliRun ok = run("env");
  ::setenv("EPIFORECAST_SEED", "thirty", 1);
  CliRun bad = run("bad");
  ::unsetenv("EPIFORECAST_SEED");
  ASSERT_EQ(ok.code, kExitOk) << ok.err;
  EXPECT_EQ(read_json(dir_ / "env" / "effective-config.json").at("seed").get<int>(), 31);
  EXPECT_EQ(bad.code, kExitUsage);
}

TEST_F(CliTest, DivergenceHasItsOwnExitCode) {
  CliRun r = train("run", {"--lr", "1e300"});
  EXPECT_EQ(r.code, kExitNumerical) << r.err;
  EXPECT_NE(r.err.find("diverged"), std::string::npos) << r.err;
}

TEST_F(CliTest, EvaluateMatchesReportTestMetrics) {
  ASSERT_EQ(train("run").code, kExitOk);
  const std::string ckpt = (dir_ / "run" / "checkpoint.json").string();
  CliRun r = cli({"evaluate", "--checkpoint", ckpt, "--data", data_.string(), "--out", (dir_ / "eval").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json report = read_json(dir_ / "run" / "report.json");
  const json eval = read_json(dir_ / "eval" / "eval.json");
  EXPECT_EQ(eval.at("rmse"), report.at("test").at("rmse"));
  EXPECT_EQ(eval.at("pcc"), report.at("test").at("pcc"));

  // Rows accumulate under one header.
  ASSERT_EQ(cli({"evaluate", "--checkpoint", ckpt, "--data", data_.string(), "--out", (dir_ / "eval").string()})
                .code,
            kExitOk);
  const std::string csv = slurp(dir_ / "eval" / "results.csv");
  EXPECT_EQ(csv.rfind("dataset,model,variant,horizon,seed,rmse,pcc\n", 0), 0u) << csv;
  EXPECT_EQ(count_lines(csv), 3u);
}

TEST_F(CliTest, EvaluateWithoutOutPrintsJson) {
  ASSERT_EQ(train("run").code, kExitOk);
  CliRun r = cli({"evaluate", "--checkpoint", (dir_ / "run" / "checkpoint.json").string(), "--data", data_.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json printed = json::parse(r.out);
  EXPECT_EQ(printed.at("rmse"), read_json(dir_ / "run" / "report.json").at("test").at("rmse"));
  EXPECT_FALSE(fs::exists(dir_ / "run" / "eval.json"));
}

TEST_F(CliTest, RegionCountMismatchNamesBothCounts) {
  ASSERT_EQ(train("run").code, kExitOk);
  const fs::path other = dir_ / "five.csv";
  write_csv(testing::lagged_sinusoids(5, 120, 0.05, 4), other);
  CliRun r = cli({"evaluate", "--checkpoint", (dir_ / "run" / "checkpoint.json").string(), "--data", other.string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("N = 3"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("N = 5"), std::string::npos) << r.err;
}

TEST_F(CliTest, AblateProducesOneRowPerCell) {
  CliRun r = cli({"ablate", "--config", config_.string(), "--data", data_.string(), "--out", (dir_ / "abl").string(),
               "--variants", "none,no-inter", "--seeds", "0,1,2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(count_lines(slurp(dir_ / "abl" / "ablation.csv")), 1u + 6u);
  EXPECT_EQ(count_lines(slurp(dir_ / "abl" / "ablation-summary.csv")), 1u + 2u);
  const json cells = read_json(dir_ / "abl" / "ablation.json").at("cells");
  ASSERT_EQ(cells.size(), 6u);
  for (const json& c : cells) EXPECT_FALSE(c.contains("error")) << c.dump();
}

TEST_F(CliTest, AblateRejectsUnknownVariant) {
  CliRun r = cli({"ablate", "--config", config_.string(), "--data", data_.string(), "--out", (dir_ / "abl").string(),
               "--variants", "none,no-everything"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("no-everything"), std::string::npos) << r.err;
}

TEST_F(CliTest, PredictGivesOneFiniteValuePerRegion) {
  ASSERT_EQ(train("run").code, kExitOk);
  const std::string ckpt = (dir_ / "run" / "checkpoint.json").string();
  CliRun r = cli({"predict", "--checkpoint", ckpt, "--data", data_.string(), "--latest"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const nlohmann::ordered_json forecast = nlohmann::ordered_json::parse(r.out);
  ASSERT_EQ(forecast.size(), 3u);
  std::vector<std::string> keys;
  for (const auto& [key, value] : forecast.items()) {
    keys.push_back(key);
    EXPECT_TRUE(std::isfinite(value.get<double>()));
  }
  EXPECT_EQ(keys, (std::vector<std::string>{"r0", "r1", "r2"}));

  ASSERT_EQ(cli({"predict", "--checkpoint", ckpt, "--data", data_.string(), "--at", "50", "--out",
                 (dir_ / "pred").string()})
                .code,
            kExitOk);
  EXPECT_EQ(read_json(dir_ / "pred" / "forecast.json").size(), 3u);
}

TEST_F(CliTest, PredictNeedsFullWindow) {
  ASSERT_EQ(train("run").code, kExitOk);
  const fs::path shortcsv = dir_ / "short.csv";
  write_csv(testing::lagged_sinusoids(3, 8, 0.05, 4), shortcsv);
  CliRun r = cli({"predict", "--checkpoint", (dir_ / "run" / "checkpoint.json").string(), "--data", shortcsv.string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("12"), std::string::npos) << r.err;
}

TEST_F(CliTest, PersistenceCheckpointForecastsConstantHistory) {
  ASSERT_EQ(train("run").code, kExitOk);
  Checkpoint ckpt = load_checkpoint(dir_ / "run" / "checkpoint.json");
  for (Parameter& p : ckpt.params.trainable()) {
    if (p.name.starts_with("fusion.")) continue;
    for (double& v : p.value.mutable_values()) v = 0.0;
    if (p.name == "ar.w") p.value.mutable_values().front() = 1.0;
  }
  const fs::path edited = dir_ / "persistence.json";
  save_checkpoint(ckpt, edited);

  EpidemicSeries flat = testing::lagged_sinusoids(3, 40, 0.0, 1);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t t = 0; t < 40; ++t) flat.counts(r, t) = 10.0 * (r + 1);
  const fs::path flatcsv = dir_ / "flat.csv";
  write_csv(flat, flatcsv);
  CliRun r = cli({"predict", "--checkpoint", edited.string(), "--data", flatcsv.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json forecast = json::parse(r.out);
  EXPECT_NEAR(forecast.at("r0").get<double>(), 10.0, 1e-9);
  EXPECT_NEAR(forecast.at("r1").get<double>(), 20.0, 1e-9);
  EXPECT_NEAR(forecast.at("r2").get<double>(), 30.0, 1e-9);
}

TEST_F(CliTest, BaselinesWriteReportAndResults) {
  CliRun r = cli({"baselines", "--config", config_.string(), "--data", data_.string(), "--out",
               (dir_ / "base").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json j = read_json(dir_ / "base" / "baselines.json");
  for (const char* k : {"persistence", "ar", "lridge"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(count_lines(slurp(dir_ / "base" / "results.csv")), 4u);
}

TEST_F(CliTest, EverythingLandsUnderOut) {
  ASSERT_EQ(train("run").code, kExitOk);
  std::vector<std::string> top;
  for (const auto& e : fs::directory_iterator(dir_)) top.push_back(e.path().filename().string());
  std::sort(top.begin(), top.end());
  EXPECT_EQ(top, (std::vector<std::string>{"cases.csv", "config.json", "run"}));
}

}  // namespace
}  // namespace epi
