#include "epiforecast/serialization.h"

#include <fstream>
#include <set>
#include <sstream>

#include "epiforecast/errors.h"

namespace epi {

namespace {

template <typename T>
T get(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

template <typename T>
void apply(const json& j, const std::string& key, T& field) {
  if (j.contains(key)) field = get<T>(j, key);
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown " + where + " key '" + key + "'");
  }
}

const std::set<std::string> kRunKeys = {
    "regions", "window",  "horizon",      "lstm_hidden", "lstm_layers", "filters",    "pool",
    "attn_dim", "ar_window", "dropout",   "ablation",    "lr",          "weight_decay", "batch_size",
    "max_epochs", "patience", "seed",     "normalization", "split",     "adam"};

}  // namespace

json to_json(const SefnetConfig& c) {
  return {{"regions", c.regions},         {"window", c.window},       {"horizon", c.horizon},
          {"lstm_hidden", c.lstm_hidden}, {"lstm_layers", c.lstm_layers}, {"filters", c.filters},
          {"pool", c.pool},               {"attn_dim", c.attn_dim},   {"ar_window", c.ar_window},
          {"dropout", c.dropout},         {"ablation", to_string(c.ablation)}};
}

json to_json(const RunConfig& c) {
  json j = to_json(c.model);
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["normalization"] = to_string(c.norm);
  j["split"] = {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}};
  j["adam"] = {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
  return j;
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  reject_unknown(j, kRunKeys, "config");
  apply(j, "regions", c.model.regions);
  apply(j, "window", c.model.window);
  apply(j, "horizon", c.model.horizon);
  apply(j, "lstm_hidden", c.model.lstm_hidden);
  apply(j, "lstm_layers", c.model.lstm_layers);
  apply(j, "filters", c.model.filters);
  apply(j, "pool", c.model.pool);
  apply(j, "attn_dim", c.model.attn_dim);
  apply(j, "ar_window", c.model.ar_window);
  apply(j, "dropout", c.model.dropout);
  if (j.contains("ablation")) c.model.ablation = parse_ablation(get<std::string>(j, "ablation"));
  apply(j, "lr", c.lr);
  apply(j, "weight_decay", c.weight_decay);
  apply(j, "batch_size", c.batch_size);
  apply(j, "max_epochs", c.max_epochs);
  apply(j, "patience", c.patience);
  apply(j, "seed", c.seed);
  if (j.contains("normalization")) c.norm = parse_norm_mode(get<std::string>(j, "normalization"));
  if (j.contains("split")) {
    const json& s = j.at("split");
    reject_unknown(s, {"train", "val", "test"}, "split");
    apply(s, "train", c.split.train);
    apply(s, "val", c.split.val);
    apply(s, "test", c.split.test);
  }
  if (j.contains("adam")) {
    const json& a = j.at("adam");
    reject_unknown(a, {"beta1", "beta2", "eps"}, "adam");
    apply(a, "beta1", c.adam.beta1);
    apply(a, "beta2", c.adam.beta2);
    apply(a, "eps", c.adam.eps);
  }
  return c;
}

json to_json(const NormStats& s) { return {{"mode", to_string(s.mode)}, {"min", s.min}, {"max", s.max}}; }

NormStats norm_stats_from_json(const json& j) {
  reject_unknown(j, {"mode", "min", "max"}, "norm_stats");
  NormStats s;
  s.mode = parse_norm_mode(get<std::string>(j, "mode"));
  s.min = get<std::vector<double>>(j, "min");
  s.max = get<std::vector<double>>(j, "max");
  if (s.min.size() != s.max.size()) throw ConfigError("norm_stats: min and max differ in length");
  return s;
}

json to_json(const TrainReport& r) {
  json epochs = json::array();
  for (const EpochRecord& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  }
  return {{"epochs", epochs},
          {"best_epoch", r.best_epoch},
          {"best_val_loss", r.best_val_loss},
          {"stop_reason", r.stop_reason},
          {"parameter_count", r.parameter_count}};
}

json to_json(const EvalResult& r) {
  json regions = json::array();
  for (const RegionMetrics& m : r.per_region) {
    regions.push_back({{"region", m.region}, {"rmse", m.rmse}, {"pcc", m.pcc ? json(*m.pcc) : json(nullptr)}});
  }
  json j = {{"horizon", r.horizon},
            {"samples", r.samples},
            {"rmse", r.rmse},
            {"pcc", r.pcc ? json(*r.pcc) : json(nullptr)},
            {"pcc_mode", to_string(r.pcc_mode)},
            {"per_region", regions}};
  if (!r.pcc_error.empty()) j["pcc_error"] = r.pcc_error;
  return j;
}

json to_json(const SefnetParams& params) {
  json p = json::object();
  for (const Parameter& param : params.trainable()) {
    const auto v = param.value.values();
    p[param.name] = {{"shape", param.value.shape()}, {"values", std::vector<double>(v.begin(), v.end())}};
  }
  json bn = json::object();
  for (const auto& [block, state] : params.batch_norm()) {
    bn[block] = {{"running_mean", state.running_mean},
                 {"running_var", state.running_var},
                 {"momentum", state.momentum},
                 {"eps", state.eps}};
  }
  return {{"params", p}, {"batch_norm", bn}};
}

SefnetParams params_from_json(const json& j) {
  SefnetParams params;
  const json arrays = get<json>(j, "params");
  const json stats = get<json>(j, "batch_norm");
  if (!arrays.is_object() || !stats.is_object()) throw ConfigError("params and batch_norm must be JSON objects");
  for (const auto& [name, entry] : arrays.items()) {
    reject_unknown(entry, {"shape", "values"}, "parameter");
    Shape shape = get<Shape>(entry, "shape");
    auto values = get<std::vector<double>>(entry, "values");
    if (shape_numel(shape) != values.size()) {
      throw ConfigError("parameter '" + name + "': " + std::to_string(values.size()) + " values for shape " +
                        shape_string(shape));
    }
    // decay flags are restored from the canonical layout when the model adopts these parameters
    params.add(name, DiffArray(shape, std::move(values), true), true);
  }
  for (const auto& [block, entry] : stats.items()) {
    reject_unknown(entry, {"running_mean", "running_var", "momentum", "eps"}, "batch_norm");
    ops::BatchNormState state;
    state.running_mean = get<std::vector<double>>(entry, "running_mean");
    state.running_var = get<std::vector<double>>(entry, "running_var");
    state.momentum = get<double>(entry, "momentum");
    state.eps = get<double>(entry, "eps");
    params.batch_norm()[block] = std::move(state);
  }
  return params;
}

Sefnet Checkpoint::model() const { return Sefnet(run.model, params.clone()); }

json to_json(const Checkpoint& c) {
  json state = to_json(c.params);
  return {{"config", to_json(c.run)},
          {"regions", c.regions},
          {"norm_stats", to_json(c.norm_stats)},
          {"params", state["params"]},
          {"batch_norm", state["batch_norm"]},
          {"best_epoch", c.best_epoch}};
}

Checkpoint checkpoint_from_json(const json& j) {
  reject_unknown(j, {"config", "regions", "norm_stats", "params", "batch_norm", "best_epoch"}, "checkpoint");
  Checkpoint c;
  c.run = run_config_from_json(get<json>(j, "config"));
  c.regions = get<std::vector<std::string>>(j, "regions");
  c.norm_stats = norm_stats_from_json(get<json>(j, "norm_stats"));
  c.params = params_from_json(j);
  c.best_epoch = get<std::size_t>(j, "best_epoch");
  if (c.regions.size() != c.run.model.regions || c.norm_stats.min.size() != c.run.model.regions) {
    throw ConfigError("checkpoint: region labels, norm stats and config disagree on N");
  }
  c.params = Sefnet(c.run.model, std::move(c.params)).params().clone();
  return c;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path.string() + ": cannot write");
  out << text;
  if (!out) throw DataError(path.string() + ": write failed");
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_text(path, dump(to_json(checkpoint)));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_json(path)); }

}  // namespace epi
