#include "epiforecast/sefnet.h"

#include <cmath>

#include "epiforecast/errors.h"

namespace epi {

namespace {

constexpr std::array<std::pair<Ablation, std::string_view>, 6> kAblationNames{{
    {Ablation::none, "none"},
    {Ablation::no_inter, "no-inter"},
    {Ablation::no_intra, "no-intra"},
    {Ablation::no_ar, "no-ar"},
    {Ablation::no_raconv, "no-raconv"},
    {Ablation::no_fusion, "no-fusion"},
}};

DiffArray uniform_array(Rng& rng, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return DiffArray(std::move(shape), std::move(v), true);
}

std::string lstm_name(std::size_t layer, std::string_view what) {
  return "lstm." + std::to_string(layer) + "." + std::string(what);
}

std::string conv_name(const ConvBlock& b, std::string_view what) { return "raconv." + b.name + "." + std::string(what); }

}  // namespace

Ablation parse_ablation(std::string_view name) {
  for (const auto& [v, n] : kAblationNames)
    if (n == name) return v;
  throw ConfigError("unknown ablation variant '" + std::string(name) +
                    "' (expected none, no-inter, no-intra, no-ar, no-raconv or no-fusion)");
}

std::string to_string(Ablation variant) {
  for (const auto& [v, n] : kAblationNames)
    if (v == variant) return std::string(n);
  return "none";
}

const std::array<Ablation, 6>& all_ablations() {
  static const std::array<Ablation, 6> all{Ablation::none,    Ablation::no_inter,  Ablation::no_intra,
                                           Ablation::no_ar,   Ablation::no_raconv, Ablation::no_fusion};
  return all;
}

std::size_t SefnetConfig::feature_width() const {
  return multi_scale() ? 4 * pool * filters + filters : pool * filters;
}

std::size_t SefnetConfig::fused_width() const {
  return (has_inter() ? attn_dim : 0) + (has_intra() ? lstm_hidden : 0);
}

void SefnetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (regions == 0) fail("regions must be positive");
  if (window == 0) fail("window T must be positive");
  if (horizon == 0) fail("horizon h must be positive");
  if (has_intra()) {
    if (lstm_hidden == 0) fail("LSTM hidden size D must be positive");
    if (lstm_layers == 0) fail("LSTM layer count must be positive");
  }
  if (has_inter()) {
    if (filters == 0) fail("filter count K must be positive");
    if (pool == 0) fail("pool size P must be positive");
    if (attn_dim == 0) fail("attention dimension A must be positive");
    // Shortest pooled branch: kernel 5 dilation 2 (T - 8), or kernel 3 (T - 2).
    const std::size_t field = multi_scale() ? 9 : 3;
    if (window < field) {
      fail("window T = " + std::to_string(window) + " is below the receptive field " + std::to_string(field) +
           " of the convolution blocks");
    }
    if (pool > window - field + 1) {
      fail("pool size P = " + std::to_string(pool) + " exceeds the shortest convolution output length " +
           std::to_string(window - field + 1));
    }
  }
  if (ar_lags() > window) {
    fail("AR window q = " + std::to_string(ar_window) + " exceeds window T = " + std::to_string(window));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

SefnetConfig ablate(SefnetConfig config, Ablation variant) {
  config.ablation = variant;
  config.validate();
  return config;
}

std::vector<ConvBlock> conv_blocks(const SefnetConfig& c) {
  if (!c.multi_scale()) return {{"local_k3_d1", 3, 1, true}};
  return {
      {"local_k3_d1", 3, 1, true},   {"local_k5_d1", 5, 1, true},
      {"periodic_k3_d2", 3, 2, true}, {"periodic_k5_d2", 5, 2, true},
      {"global_kT_d1", c.window, 1, false},
  };
}

void SefnetParams::add(std::string name, DiffArray value, bool decay) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  value.set_requires_grad(true);
  params_.push_back({std::move(name), std::move(value), decay});
}

bool SefnetParams::contains(std::string_view name) const {
  for (const Parameter& p : params_)
    if (p.name == name) return true;
  return false;
}

DiffArray& SefnetParams::at(std::string_view name) {
  for (Parameter& p : params_)
    if (p.name == name) return p.value;
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

const DiffArray& SefnetParams::at(std::string_view name) const {
  return const_cast<SefnetParams*>(this)->at(name);
}

std::size_t SefnetParams::count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

SefnetParams SefnetParams::clone() const {
  SefnetParams out;
  for (const Parameter& p : params_) out.add(p.name, p.value.detach(), p.decay);
  out.bn_ = bn_;
  return out;
}

void SefnetParams::zero_grad() {
  for (Parameter& p : params_) p.value.zero_grad();
}

SefnetParams SefnetParams::initialize(const SefnetConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  SefnetParams p;
  if (c.has_intra()) {
    const std::size_t D = c.lstm_hidden;
    for (std::size_t l = 0; l < c.lstm_layers; ++l) {
      const std::size_t in = l == 0 ? 1 : D;
      p.add(lstm_name(l, "w_ih"), uniform_array(rng, {in, 4 * D}, in), true);
      p.add(lstm_name(l, "w_hh"), uniform_array(rng, {D, 4 * D}, D), true);
      // Gate order i, f, g, o; the forget gate starts open.
      DiffArray bias = DiffArray::zeros({4 * D});
      for (std::size_t j = D; j < 2 * D; ++j) bias.mutable_values()[j] = 1.0;
      p.add(lstm_name(l, "bias"), bias, false);
    }
  }
  if (c.has_inter()) {
    for (const ConvBlock& b : conv_blocks(c)) {
      p.add(conv_name(b, "kernel"), uniform_array(rng, {c.filters, b.kernel}, b.kernel), true);
      p.add(conv_name(b, "bn_scale"), DiffArray::full({c.filters}, 1.0), false);
      p.add(conv_name(b, "bn_shift"), DiffArray::zeros({c.filters}), false);
      p.bn_.emplace(b.name, ops::BatchNormState(c.filters));
    }
    const std::size_t F = c.feature_width();
    for (const char* name : {"attention.w_q", "attention.w_k", "attention.w_v"}) {
      p.add(name, uniform_array(rng, {F, c.attn_dim}, F), true);
    }
  }
  if (c.has_fusion()) {
    if (c.has_inter()) p.add("fusion.w_inter", DiffArray::full({c.regions, c.attn_dim}, 1.0), false);
    if (c.has_intra()) p.add("fusion.w_intra", DiffArray::full({c.regions, c.lstm_hidden}, 1.0), false);
  }
  const std::size_t width = c.fused_width();
  if (width > 0) {
    p.add("output.w", uniform_array(rng, {width, 1}, width), true);
    p.add("output.bias", DiffArray::zeros({1}), false);
  }
  if (c.ar_lags() > 0) {
    p.add("ar.w", DiffArray::zeros({c.ar_lags()}), true);
    p.add("ar.bias", DiffArray::zeros({1}), false);
  }
  return p;
}

Sefnet::Sefnet(SefnetConfig config, std::uint64_t seed)
    : config_(config), params_(SefnetParams::initialize(config, seed)) {}

Sefnet::Sefnet(SefnetConfig config, SefnetParams params) : config_(config), params_(std::move(params)) {
  const SefnetParams expected = SefnetParams::initialize(config_, 0);
  const auto& want = expected.trainable();
  auto& have = params_.trainable();
  if (want.size() != have.size()) {
    throw ConfigError("parameter set has " + std::to_string(have.size()) + " arrays, configuration needs " +
                      std::to_string(want.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (!params_.contains(want[i].name)) throw ConfigError("missing parameter '" + want[i].name + "'");
    const DiffArray& got = params_.at(want[i].name);
    if (got.shape() != want[i].value.shape()) {
      throw DimensionError("parameter '" + want[i].name + "' has shape " + shape_string(got.shape()) +
                           ", configuration needs " + shape_string(want[i].value.shape()));
    }
  }
  // Keep the canonical enumeration order regardless of how params were built.
  std::vector<Parameter> ordered;
  for (const Parameter& w : want) {
    DiffArray v = params_.at(w.name);
    v.set_requires_grad(true);
    ordered.push_back({w.name, v, w.decay});
  }
  have = std::move(ordered);
  for (const auto& [name, state] : expected.batch_norm()) {
    auto it = params_.batch_norm().find(name);
    if (it == params_.batch_norm().end()) {
      params_.batch_norm().emplace(name, state);
    } else if (it->second.running_mean.size() != config_.filters || it->second.running_var.size() != config_.filters) {
      throw DimensionError("batch-norm statistics of block '" + name + "' do not match K = " +
                           std::to_string(config_.filters));
    }
  }
}

void Sefnet::check_input(const DiffArray& x) const {
  if (x.rank() != 2 || x.dim(0) != config_.regions || x.dim(1) != config_.window) {
    throw DimensionError("model input must be " + shape_string({config_.regions, config_.window}) + ", got " +
                         shape_string(x.shape()));
  }
}

void Sefnet::check_batch(const DiffArray& x) const {
  if (x.rank() != 3 || x.dim(0) == 0 || x.dim(1) != config_.regions || x.dim(2) != config_.window) {
    throw DimensionError("batched model input must be [B x " + std::to_string(config_.regions) + " x " +
                         std::to_string(config_.window) + "], got " + shape_string(x.shape()));
  }
}

DiffArray Sefnet::intra_impl(Tape& tape, const DiffArray& rows) const {
  const std::size_t R = rows.dim(0), T = config_.window, D = config_.lstm_hidden;
  std::vector<DiffArray> inputs;
  inputs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) inputs.push_back(ops::slice(tape, rows, 1, t, t + 1));

  DiffArray h;
  for (std::size_t l = 0; l < config_.lstm_layers; ++l) {
    const DiffArray& w_ih = params_.at(lstm_name(l, "w_ih"));
    const DiffArray& w_hh = params_.at(lstm_name(l, "w_hh"));
    const DiffArray& bias = params_.at(lstm_name(l, "bias"));
    h = DiffArray::zeros({R, D});
    DiffArray c = DiffArray::zeros({R, D});
    for (std::size_t t = 0; t < T; ++t) {
      DiffArray gates = ops::add_bias(
          tape, ops::add(tape, ops::matmul(tape, inputs[t], w_ih), ops::matmul(tape, h, w_hh)), bias);
      DiffArray i = ops::sigmoid(tape, ops::slice(tape, gates, 1, 0, D));
      DiffArray f = ops::sigmoid(tape, ops::slice(tape, gates, 1, D, 2 * D));
      DiffArray g = ops::tanh(tape, ops::slice(tape, gates, 1, 2 * D, 3 * D));
      DiffArray o = ops::sigmoid(tape, ops::slice(tape, gates, 1, 3 * D, 4 * D));
      c = ops::add(tape, ops::mul(tape, f, c), ops::mul(tape, i, g));
      h = ops::mul(tape, o, ops::tanh(tape, c));
      inputs[t] = h;  // becomes the next layer's input sequence
    }
  }
  return h;
}

DiffArray Sefnet::raconv_impl(Tape& tape, const DiffArray& rows, Mode mode,
                              std::map<std::string, ops::BatchNormState>* running) const {
  const std::size_t R = rows.dim(0), K = config_.filters, P = config_.pool;
  std::vector<DiffArray> parts;
  for (const ConvBlock& b : conv_blocks(config_)) {
    DiffArray conv = ops::conv1d_bank(tape, rows, params_.at(conv_name(b, "kernel")), b.dilation);
    DiffArray normed;
    const DiffArray& scale = params_.at(conv_name(b, "bn_scale"));
    const DiffArray& shift = params_.at(conv_name(b, "bn_shift"));
    if (mode == Mode::train) {
      normed = ops::batch_norm(tape, conv, scale, shift, running->at(b.name), Mode::train);
    } else {
      ops::BatchNormState frozen = params_.batch_norm().at(b.name);
      normed = ops::batch_norm(tape, conv, scale, shift, frozen, Mode::eval);
    }
    if (b.pooled) {
      parts.push_back(ops::reshape(tape, ops::adaptive_max_pool(tape, normed, P), {R, K * P}));
    } else {
      parts.push_back(ops::reshape(tape, normed, {R, K * normed.dim(2)}));
    }
  }
  return ops::tanh(tape, ops::concat(tape, parts, 1));
}

Sefnet::Attention Sefnet::attention_impl(Tape& tape, const DiffArray& features, std::size_t batch) const {
  const std::size_t N = config_.regions, A = config_.attn_dim;
  DiffArray q = ops::matmul(tape, features, params_.at("attention.w_q"));
  DiffArray k = ops::matmul(tape, features, params_.at("attention.w_k"));
  DiffArray v = ops::matmul(tape, features, params_.at("attention.w_v"));
  q = ops::reshape(tape, q, {batch, N, A});
  k = ops::reshape(tape, k, {batch, N, A});
  v = ops::reshape(tape, v, {batch, N, A});
  // Logits are deliberately left unscaled (no 1/sqrt(A)).
  DiffArray logits = ops::reshape(tape, ops::matmul(tape, q, ops::transpose(tape, k)), {batch * N, N});
  DiffArray weights = ops::reshape(tape, ops::softmax_rows(tape, logits), {batch, N, N});
  return {weights, ops::reshape(tape, ops::matmul(tape, weights, v), {batch * N, A})};
}

DiffArray Sefnet::fuse_impl(Tape& tape, const DiffArray& inter, const DiffArray& intra, std::size_t batch) const {
  auto gate = [&](const DiffArray& emb, const char* name) {
    if (!config_.has_fusion()) return emb;
    DiffArray w = params_.at(name);
    if (batch > 1) {
      std::vector<DiffArray> copies(batch, w);
      w = ops::reshape(tape, ops::stack(tape, copies), {batch * w.dim(0), w.dim(1)});
    }
    return ops::mul(tape, w, emb);
  };
  std::vector<DiffArray> parts;
  if (inter.defined()) parts.push_back(gate(inter, "fusion.w_inter"));
  if (intra.defined()) parts.push_back(gate(intra, "fusion.w_intra"));
  if (parts.size() == 1) return parts.front();
  return ops::concat(tape, parts, 1);
}

DiffArray Sefnet::ar_impl(Tape& tape, const DiffArray& rows) const {
  const std::size_t q = config_.ar_lags(), T = config_.window, R = rows.dim(0);
  if (q == 0) return DiffArray::zeros({R});
  // Column m holds x_{t-m}, matching weight m.
  std::vector<std::size_t> lags(q);
  for (std::size_t m = 0; m < q; ++m) lags[m] = T - 1 - m;
  DiffArray recent = ops::gather_last(tape, rows, lags);
  DiffArray w = ops::reshape(tape, params_.at("ar.w"), {q, 1});
  DiffArray y = ops::add_bias(tape, ops::matmul(tape, recent, w), params_.at("ar.bias"));
  return ops::reshape(tape, y, {R});
}

DiffArray Sefnet::forward_impl(Tape& tape, const DiffArray& x, Mode mode, Rng* dropout_rng,
                               std::map<std::string, ops::BatchNormState>* running) const {
  check_batch(x);
  const std::size_t B = x.dim(0), N = config_.regions, R = B * N;
  const DiffArray rows = ops::reshape(tape, x, {R, config_.window});
  DiffArray inter, intra;
  if (config_.has_inter()) inter = attention_impl(tape, raconv_impl(tape, rows, mode, running), B).embedding;
  if (config_.has_intra()) intra = intra_impl(tape, rows);

  DiffArray fused = fuse_impl(tape, inter, intra, B);
  if (mode == Mode::train && config_.dropout > 0.0) {
    fused = ops::dropout(tape, fused, config_.dropout, mode, *dropout_rng);
  }
  DiffArray y = ops::reshape(
      tape, ops::add_bias(tape, ops::matmul(tape, fused, params_.at("output.w")), params_.at("output.bias")), {R});
  if (config_.ar_lags() > 0) y = ops::add(tape, y, ar_impl(tape, rows));
  return ops::reshape(tape, y, {B, N});
}

DiffArray Sefnet::intra_forward(Tape& tape, const DiffArray& x) const {
  check_input(x);
  return intra_impl(tape, x);
}

DiffArray Sefnet::raconv_forward(Tape& tape, const DiffArray& x, Mode mode) {
  check_input(x);
  return raconv_impl(tape, x, mode, &params_.batch_norm());
}

DiffArray Sefnet::raconv_forward(Tape& tape, const DiffArray& x) const {
  check_input(x);
  return raconv_impl(tape, x, Mode::eval, nullptr);
}

Sefnet::Attention Sefnet::attention_forward(Tape& tape, const DiffArray& features) const {
  const std::size_t N = config_.regions;
  Attention a = attention_impl(tape, features, 1);
  a.weights = ops::reshape(tape, a.weights, {N, N});
  return a;
}

DiffArray Sefnet::fuse(Tape& tape, const DiffArray& inter, const DiffArray& intra) const {
  return fuse_impl(tape, inter, intra, 1);
}

DiffArray Sefnet::ar_forward(Tape& tape, const DiffArray& x) const {
  check_input(x);
  return ar_impl(tape, x);
}

DiffArray Sefnet::forward(Tape& tape, const DiffArray& x, Mode mode, Rng& dropout_rng) {
  check_input(x);
  const std::size_t N = config_.regions;
  DiffArray batch = ops::reshape(tape, x, {1, N, config_.window});
  return ops::reshape(tape, forward_impl(tape, batch, mode, &dropout_rng, &params_.batch_norm()), {N});
}

DiffArray Sefnet::forward(Tape& tape, const DiffArray& x) const {
  check_input(x);
  const std::size_t N = config_.regions;
  DiffArray batch = ops::reshape(tape, x, {1, N, config_.window});
  return ops::reshape(tape, forward_impl(tape, batch, Mode::eval, nullptr, nullptr), {N});
}

DiffArray Sefnet::forward_batch(Tape& tape, const DiffArray& x, Mode mode, Rng& dropout_rng) {
  return forward_impl(tape, x, mode, &dropout_rng, &params_.batch_norm());
}

DiffArray Sefnet::forward_batch(Tape& tape, const DiffArray& x) const {
  return forward_impl(tape, x, Mode::eval, nullptr, nullptr);
}

DiffArray Sefnet::pack(std::span<const Matrix> windows) const {
  const std::size_t N = config_.regions, T = config_.window;
  std::vector<double> values;
  values.reserve(windows.size() * N * T);
  for (const Matrix& w : windows) {
    if (w.rows != N || w.cols != T) {
      throw DimensionError("model input must be " + shape_string({N, T}) + ", got " +
                           shape_string({w.rows, w.cols}));
    }
    values.insert(values.end(), w.data.begin(), w.data.end());
  }
  return DiffArray({windows.size(), N, T}, std::move(values));
}

std::vector<double> Sefnet::predict(const Matrix& window) const {
  Tape tape(false);
  DiffArray y = forward(tape, DiffArray::from_matrix(window));
  return {y.values().begin(), y.values().end()};
}

Matrix Sefnet::predict(std::span<const Matrix> windows) const {
  if (windows.empty()) return Matrix(0, config_.regions);
  Tape tape(false);
  DiffArray y = forward_batch(tape, pack(windows));
  Matrix out(windows.size(), config_.regions);
  std::copy(y.values().begin(), y.values().end(), out.data.begin());
  return out;
}

}  // namespace epi
