#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "epiforecast/matrix.h"
#include "epiforecast/ops.h"
#include "epiforecast/rng.h"
#include "epiforecast/tensor.h"

namespace epi {

// Architecture variants: the full model and one component removed at a time.
enum class Ablation { none, no_inter, no_intra, no_ar, no_raconv, no_fusion };

Ablation parse_ablation(std::string_view name);
std::string to_string(Ablation variant);
const std::array<Ablation, 6>& all_ablations();

struct SefnetConfig {
  std::size_t regions = 1;       // N
  std::size_t window = 20;       // T
  std::size_t horizon = 3;       // h
  std::size_t lstm_hidden = 32;  // D
  std::size_t lstm_layers = 1;
  std::size_t filters = 8;    // K, per convolution block
  std::size_t pool = 3;       // P, adaptive max pool output size
  std::size_t attn_dim = 32;  // A
  std::size_t ar_window = 20; // q, 0 disables the linear head
  double dropout = 0.2;
  Ablation ablation = Ablation::none;

  // Throws ConfigError naming the violated constraint.
  void validate() const;

  bool has_inter() const { return ablation != Ablation::no_inter; }
  bool has_intra() const { return ablation != Ablation::no_intra; }
  bool has_fusion() const { return ablation != Ablation::no_fusion; }
  bool multi_scale() const { return ablation != Ablation::no_raconv; }
  std::size_t ar_lags() const { return ablation == Ablation::no_ar ? 0 : ar_window; }

  // Width of the convolutional region features: 4PK + K, or PK with a
  // single convolution block.
  std::size_t feature_width() const;
  // Width of the fused embedding fed to the output layer.
  std::size_t fused_width() const;

  bool operator==(const SefnetConfig&) const = default;
};

SefnetConfig ablate(SefnetConfig config, Ablation variant);

struct ConvBlock {
  std::string name;
  std::size_t kernel = 0;
  std::size_t dilation = 1;
  bool pooled = true;
};

// Local (k=3,5 d=1), periodic (k=3,5 d=2) and global (k=T) blocks, or the
// single k=3 block of the no-raconv variant.
std::vector<ConvBlock> conv_blocks(const SefnetConfig& config);

struct Parameter {
  std::string name;
  DiffArray value;
  bool decay = true;  // subject to weight decay
};

// Every learnable array in a fixed enumeration order, plus the batch-norm
// running statistics (state, not learned) keyed by convolution block.
class SefnetParams {
 public:
  static SefnetParams initialize(const SefnetConfig& config, std::uint64_t seed);

  void add(std::string name, DiffArray value, bool decay);
  bool contains(std::string_view name) const;
  DiffArray& at(std::string_view name);
  const DiffArray& at(std::string_view name) const;

  std::vector<Parameter>& trainable() { return params_; }
  const std::vector<Parameter>& trainable() const { return params_; }
  std::map<std::string, ops::BatchNormState>& batch_norm() { return bn_; }
  const std::map<std::string, ops::BatchNormState>& batch_norm() const { return bn_; }

  // Total number of learnable scalars.
  std::size_t count() const;
  SefnetParams clone() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
  std::map<std::string, ops::BatchNormState> bn_;
};

class Sefnet {
 public:
  Sefnet(SefnetConfig config, std::uint64_t seed);
  // Adopts existing parameters after checking names and shapes.
  Sefnet(SefnetConfig config, SefnetParams params);

  const SefnetConfig& config() const { return config_; }
  SefnetParams& params() { return params_; }
  const SefnetParams& params() const { return params_; }

  // Last hidden state of a shared-weight LSTM run over each region: N x D.
  DiffArray intra_forward(Tape& tape, const DiffArray& x) const;
  // Multi-scale convolution features: N x F. Train mode updates the
  // batch-norm running statistics.
  DiffArray raconv_forward(Tape& tape, const DiffArray& x, Mode mode);
  DiffArray raconv_forward(Tape& tape, const DiffArray& x) const;

  struct Attention {
    DiffArray weights;    // N x N, rows are probability vectors
    DiffArray embedding;  // N x A
  };
  Attention attention_forward(Tape& tape, const DiffArray& features) const;

  // Either input may be undefined when its branch is ablated.
  DiffArray fuse(Tape& tape, const DiffArray& inter, const DiffArray& intra) const;
  // Shared-weight autoregression over the last q steps: length N.
  DiffArray ar_forward(Tape& tape, const DiffArray& x) const;

  // Full prediction for one N x T window: length N.
  DiffArray forward(Tape& tape, const DiffArray& x, Mode mode, Rng& dropout_rng);
  DiffArray forward(Tape& tape, const DiffArray& x) const;
  // Windows stacked as B x N x T: B x N. In train mode batch-norm statistics
  // pool over all B*N rows; in eval mode row b equals forward() on window b.
  DiffArray forward_batch(Tape& tape, const DiffArray& x, Mode mode, Rng& dropout_rng);
  DiffArray forward_batch(Tape& tape, const DiffArray& x) const;
  DiffArray pack(std::span<const Matrix> windows) const;

  std::vector<double> predict(const Matrix& window) const;
  // One row per window.
  Matrix predict(std::span<const Matrix> windows) const;

 private:
  DiffArray intra_impl(Tape& tape, const DiffArray& rows) const;
  DiffArray raconv_impl(Tape& tape, const DiffArray& rows, Mode mode,
                        std::map<std::string, ops::BatchNormState>* running) const;
  Attention attention_impl(Tape& tape, const DiffArray& features, std::size_t batch) const;
  DiffArray fuse_impl(Tape& tape, const DiffArray& inter, const DiffArray& intra, std::size_t batch) const;
  DiffArray ar_impl(Tape& tape, const DiffArray& rows) const;
  DiffArray forward_impl(Tape& tape, const DiffArray& x, Mode mode, Rng* dropout_rng,
                         std::map<std::string, ops::BatchNormState>* running) const;
  void check_input(const DiffArray& x) const;
  void check_batch(const DiffArray& x) const;

  SefnetConfig config_;
  SefnetParams params_;
};

}  // namespace epi
