#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "epiforecast/rng.h"
#include "epiforecast/tensor.h"

namespace epi::ops {

// Linear algebra -------------------------------------------------------------

// [m x k] . [k x n] -> [m x n], or batched [B x m x k] . [B x k x n] -> [B x m x n]
DiffArray matmul(Tape& tape, const DiffArray& a, const DiffArray& b);
// Swaps the last two axes of a rank 2 or 3 array.
DiffArray transpose(Tape& tape, const DiffArray& a);

// Element-wise -----------------------------------------------------------------

DiffArray add(Tape& tape, const DiffArray& a, const DiffArray& b);
DiffArray sub(Tape& tape, const DiffArray& a, const DiffArray& b);
DiffArray mul(Tape& tape, const DiffArray& a, const DiffArray& b);
DiffArray scale(Tape& tape, const DiffArray& a, double factor);
// `bias` is either a single value or one value per entry of the last axis.
DiffArray add_bias(Tape& tape, const DiffArray& a, const DiffArray& bias);
DiffArray tanh(Tape& tape, const DiffArray& a);
DiffArray sigmoid(Tape& tape, const DiffArray& a);
// Train mode: zero each entry with probability p, scale survivors by 1/(1-p).
DiffArray dropout(Tape& tape, const DiffArray& a, double p, Mode mode, Rng& rng);

// Structure --------------------------------------------------------------------

DiffArray softmax_rows(Tape& tape, const DiffArray& a);
DiffArray concat(Tape& tape, std::span<const DiffArray> parts, std::size_t axis);
DiffArray slice(Tape& tape, const DiffArray& a, std::size_t axis, std::size_t begin, std::size_t end);
// out[..., j] = a[..., index[j]]
DiffArray gather_last(Tape& tape, const DiffArray& a, std::span<const std::size_t> index);
DiffArray reshape(Tape& tape, const DiffArray& a, Shape shape);
// Equal-shaped arrays stacked along a new leading axis.
DiffArray stack(Tape& tape, std::span<const DiffArray> parts);

// Reductions -------------------------------------------------------------------

DiffArray sum(Tape& tape, const DiffArray& a);
DiffArray mean(Tape& tape, const DiffArray& a);
// Mean of squared differences over every entry.
DiffArray mse_loss(Tape& tape, const DiffArray& pred, const DiffArray& target);

// Convolution and pooling --------------------------------------------------------

// Valid dilated cross-correlation: out[j] = sum_i k[i] * x[j + d*i].
DiffArray conv1d(Tape& tape, const DiffArray& x, const DiffArray& kernel, std::size_t dilation);
// Every row of x [R x T] against every filter of kernels [K x s] -> [R x K x T-d(s-1)].
DiffArray conv1d_bank(Tape& tape, const DiffArray& x, const DiffArray& kernels, std::size_t dilation);
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t dilation);

// Max over segment i = [floor(i*L/P), floor((i+1)*L/P)) of the last axis.
DiffArray adaptive_max_pool(Tape& tape, const DiffArray& x, std::size_t pool);

struct BatchNormState {
  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}

  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

// x is [C x L] or [B x C x L]; statistics are per channel over all other axes.
// With groups > 1 the B rows split into that many consecutive groups, each
// normalized on its own statistics and folded into the running averages in
// order.
DiffArray batch_norm(Tape& tape, const DiffArray& x, const DiffArray& gamma, const DiffArray& beta,
                     BatchNormState& state, Mode mode, std::size_t groups = 1);

}  // namespace epi::ops
