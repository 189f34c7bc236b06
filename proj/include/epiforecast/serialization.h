#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "epiforecast/data.h"
#include "epiforecast/evaluation.h"
#include "epiforecast/sefnet.h"
#include "epiforecast/training.h"

namespace epi {

using json = nlohmann::json;

json to_json(const SefnetConfig& config);
json to_json(const RunConfig& config);
json to_json(const NormStats& stats);
json to_json(const TrainReport& report);
json to_json(const EvalResult& result);
json to_json(const SefnetParams& params);

// Applies the keys present in `j` on top of `base`. Unknown keys and
// ill-typed values throw ConfigError.
RunConfig run_config_from_json(const json& j, RunConfig base = {});
NormStats norm_stats_from_json(const json& j);
SefnetParams params_from_json(const json& j);

struct Checkpoint {
  RunConfig run;
  std::vector<std::string> regions;
  NormStats norm_stats;
  SefnetParams params;
  std::size_t best_epoch = 0;

  Sefnet model() const;
};

json to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const json& j);

// Two-space indented text with a trailing newline.
std::string dump(const json& j);
json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace epi
