#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epiforecast/data.h"
#include "epiforecast/sefnet.h"

namespace epi {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct RunConfig {
  SefnetConfig model;
  double lr = 0.001;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  NormMode norm = NormMode::per_region;
  SplitRatios split;
  AdamSettings adam;

  void validate() const;
};

// First and second moment estimates, one buffer per parameter.
class AdamState {
 public:
  explicit AdamState(const std::vector<Parameter>& params, AdamSettings settings = {});

  // Decoupled weight decay on `decay` parameters, then the bias-corrected
  // Adam update. Every parameter must carry a gradient.
  void step(std::vector<Parameter>& params, double lr, double weight_decay);
  std::size_t steps() const { return steps_; }
  const AdamSettings& settings() const { return settings_; }

 private:
  AdamSettings settings_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t steps_ = 0;
};

void adam_step(std::vector<Parameter>& params, AdamState& state, double lr, double weight_decay);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;  // "patience" or "max_epochs"
  std::size_t parameter_count = 0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Sefnet model;  // parameters from the best validation epoch
  TrainReport report;
};

// Mean squared error of eval-mode predictions on the normalized scale.
double mean_squared_error(const Sefnet& model, std::span<const WindowSample> samples);

// Seeded mini-batch training with early stopping on validation loss. Throws
// NumericalError when a loss turns non-finite.
TrainResult train(const RunConfig& config, const WindowedSplits& samples);

// Candidate values per hyperparameter; an empty list keeps the base value.
struct HyperGrid {
  std::vector<std::size_t> lstm_hidden;
  std::vector<std::size_t> lstm_layers;
  std::vector<std::size_t> filters;
  std::vector<std::size_t> pool;
  std::vector<std::size_t> attn_dim;
  std::vector<std::size_t> ar_window;
  std::vector<double> lr;

  // D, A in {16,32,64}; L in {1,2}; K in {4,8,12,16}; P in {1,3,5};
  // q in {0,10,20}; lr in {0.01,0.005,0.001}.
  static HyperGrid standard();
  std::size_t size() const;
};

std::vector<RunConfig> expand_grid(const RunConfig& base, const HyperGrid& grid);

struct GridOptions {
  std::size_t jobs = 1;
  // 0 runs every combination; otherwise a seeded subset of this size.
  std::size_t max_runs = 0;
  std::uint64_t sample_seed = 0;
};

struct GridRun {
  RunConfig config;
  std::optional<TrainReport> report;
  std::string error;
};

struct GridSearchResult {
  std::vector<GridRun> runs;
  std::optional<std::size_t> best;  // index into runs
  std::optional<Sefnet> best_model;
  std::size_t failures = 0;
};

// Trains each combination; the winner has the lowest validation loss, ties
// going to fewer parameters and then the lower learning rate. Failed runs are
// recorded and do not stop the sweep.
GridSearchResult grid_search(const RunConfig& base, const HyperGrid& grid, const WindowedSplits& samples,
                             const GridOptions& options = {});

}  // namespace epi
