#include "epiforecast/training.h"

#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "epiforecast/errors.h"

namespace epi {

void RunConfig::validate() const {
  model.validate();
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive and finite");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (patience == 0) throw ConfigError("patience must be at least 1");
}

AdamState::AdamState(const std::vector<Parameter>& params, AdamSettings settings) : settings_(settings) {
  for (const Parameter& p : params) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

void AdamState::step(std::vector<Parameter>& params, double lr, double weight_decay) {
  if (params.size() != m_.size()) throw AutogradError("adam: parameter list changed size");
  for (const Parameter& p : params) {
    if (!p.value.has_grad()) throw AutogradError("adam: parameter '" + p.name + "' has no gradient");
  }
  ++steps_;
  const double b1 = settings_.beta1, b2 = settings_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    auto w = p.value.mutable_values();
    auto g = p.value.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    if (m.size() != w.size()) throw AutogradError("adam: moment buffer of '" + p.name + "' has the wrong size");
    const double decay = p.decay ? lr * weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= decay * w[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + settings_.eps);
    }
  }
}

void adam_step(std::vector<Parameter>& params, AdamState& state, double lr, double weight_decay) {
  state.step(params, lr, weight_decay);
}

double mean_squared_error(const Sefnet& model, std::span<const WindowSample> samples) {
  if (samples.empty()) throw ConfigError("mean_squared_error: no samples");
  constexpr std::size_t kChunk = 256;
  double total = 0.0;
  std::size_t count = 0;
  std::vector<Matrix> windows;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    windows.clear();
    for (std::size_t i = start; i < end; ++i) windows.push_back(samples[i].input);
    const Matrix pred = model.predict(windows);
    for (std::size_t i = start; i < end; ++i) {
      for (std::size_t r = 0; r < pred.cols; ++r) {
        const double e = pred(i - start, r) - samples[i].target[r];
        total += e * e;
      }
    }
    count += (end - start) * pred.cols;
  }
  return total / static_cast<double>(count);
}

namespace {

void check_samples(const SefnetConfig& c, const WindowedSplits& samples) {
  if (samples.train.empty()) throw ConfigError("training split has no samples");
  if (samples.val.empty()) throw ConfigError("validation split has no samples");
  const Matrix& x = samples.train.front().input;
  if (x.rows != c.regions || x.cols != c.window) {
    throw DimensionError("samples are " + std::to_string(x.rows) + "x" + std::to_string(x.cols) +
                         " but the model expects N = " + std::to_string(c.regions) + ", T = " + std::to_string(c.window));
  }
}

std::string diverged(std::size_t epoch, double lr, const char* which, double value) {
  std::ostringstream os;
  os << "training diverged at epoch " << epoch << " (lr=" << lr << "): " << which << " loss is " << value;
  return os.str();
}

}  // namespace

TrainResult train(const RunConfig& config, const WindowedSplits& samples) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  check_samples(config.model, samples);

  Sefnet model(config.model, config.seed);
  AdamState adam(model.params().trainable(), config.adam);
  Rng dropout_rng(derive_seed(config.seed, 1));

  const std::size_t n = samples.train.size();
  const std::size_t N = config.model.regions;
  std::vector<std::size_t> order(n);

  TrainReport report;
  report.parameter_count = model.params().count();
  std::optional<SefnetParams> best;
  double best_val = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, 1000 + epoch));
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      model.params().zero_grad();
      Tape tape;
      std::vector<Matrix> windows;
      std::vector<double> targets;
      windows.reserve(end - start);
      targets.reserve((end - start) * N);
      for (std::size_t i = start; i < end; ++i) {
        const WindowSample& s = samples.train[order[i]];
        windows.push_back(s.input);
        targets.insert(targets.end(), s.target.begin(), s.target.end());
      }
      DiffArray pred = model.forward_batch(tape, model.pack(windows), Mode::train, dropout_rng);
      DiffArray loss = ops::mse_loss(tape, pred, DiffArray({end - start, N}, std::move(targets)));
      if (!std::isfinite(loss.item())) throw NumericalError(diverged(epoch, config.lr, "training", loss.item()));
      tape.backward(loss);
      adam.step(model.params().trainable(), config.lr, config.weight_decay);
      loss_sum += loss.item() * static_cast<double>(end - start);
    }

    const double train_loss = loss_sum / static_cast<double>(n);
    const double val_loss = mean_squared_error(model, samples.val);
    if (!std::isfinite(val_loss)) throw NumericalError(diverged(epoch, config.lr, "validation", val_loss));
    report.epochs.push_back({epoch, train_loss, val_loss});

    if (val_loss < best_val) {
      best_val = val_loss;
      report.best_epoch = epoch;
      best = model.params().clone();
    } else if (epoch - report.best_epoch >= config.patience) {
      report.stop_reason = "patience";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  report.best_val_loss = best_val;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {Sefnet(config.model, std::move(*best)), std::move(report)};
}

HyperGrid HyperGrid::standard() {
  HyperGrid g;
  g.lstm_hidden = {16, 32, 64};
  g.attn_dim = {16, 32, 64};
  g.lstm_layers = {1, 2};
  g.filters = {4, 8, 12, 16};
  g.pool = {1, 3, 5};
  g.ar_window = {0, 10, 20};
  g.lr = {0.01, 0.005, 0.001};
  return g;
}

std::size_t HyperGrid::size() const {
  auto n = [](const auto& v) { return std::max<std::size_t>(1, v.size()); };
  return n(lstm_hidden) * n(lstm_layers) * n(filters) * n(pool) * n(attn_dim) * n(ar_window) * n(lr);
}

std::vector<RunConfig> expand_grid(const RunConfig& base, const HyperGrid& grid) {
  auto or_base = [](const auto& values, auto fallback) {
    using T = decltype(fallback);
    return values.empty() ? std::vector<T>{fallback} : std::vector<T>(values.begin(), values.end());
  };
  std::vector<RunConfig> out;
  for (std::size_t d : or_base(grid.lstm_hidden, base.model.lstm_hidden))
    for (std::size_t l : or_base(grid.lstm_layers, base.model.lstm_layers))
      for (std::size_t k : or_base(grid.filters, base.model.filters))
        for (std::size_t p : or_base(grid.pool, base.model.pool))
          for (std::size_t a : or_base(grid.attn_dim, base.model.attn_dim))
            for (std::size_t q : or_base(grid.ar_window, base.model.ar_window))
              for (double lr : or_base(grid.lr, base.lr)) {
                RunConfig c = base;
                c.model.lstm_hidden = d;
                c.model.lstm_layers = l;
                c.model.filters = k;
                c.model.pool = p;
                c.model.attn_dim = a;
                c.model.ar_window = q;
                c.lr = lr;
                out.push_back(c);
              }
  return out;
}

GridSearchResult grid_search(const RunConfig& base, const HyperGrid& grid, const WindowedSplits& samples,
                             const GridOptions& options) {
  std::vector<RunConfig> configs = expand_grid(base, grid);
  if (configs.empty()) throw ConfigError("grid search: empty grid");
  if (options.max_runs > 0 && options.max_runs < configs.size()) {
    std::vector<std::size_t> idx(configs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(options.sample_seed);
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(options.max_runs);
    std::sort(idx.begin(), idx.end());
    std::vector<RunConfig> subset;
    for (std::size_t i : idx) subset.push_back(configs[i]);
    configs = std::move(subset);
  }

  GridSearchResult result;
  result.runs.resize(configs.size());
  std::vector<std::optional<Sefnet>> models(configs.size());
  auto run_one = [&](std::size_t i) {
    GridRun& run = result.runs[i];
    run.config = configs[i];
    try {
      TrainResult r = train(configs[i], samples);
      run.report = std::move(r.report);
      models[i].emplace(std::move(r.model));
    } catch (const std::exception& e) {
      run.error = e.what();
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, configs.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < configs.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) run_one(i);
      });
    }
    for (std::thread& t : workers) t.join();
  }

  for (std::size_t i = 0; i < result.runs.size(); ++i) {
    const GridRun& run = result.runs[i];
    if (!run.report) {
      ++result.failures;
      continue;
    }
    if (!result.best) {
      result.best = i;
      continue;
    }
    const GridRun& cur = result.runs[*result.best];
    const auto key = [](const GridRun& r) {
      return std::tuple(r.report->best_val_loss, r.report->parameter_count, r.config.lr);
    };
    if (key(run) < key(cur)) result.best = i;
  }
  if (result.best) result.best_model = std::move(models[*result.best]);
  return result;
}

}  // namespace epi
