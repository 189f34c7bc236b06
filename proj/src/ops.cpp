#include "epiforecast/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "epiforecast/errors.h"

namespace epi::ops {
namespace {

void require_same_shape(const DiffArray& a, const DiffArray& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_rank(const DiffArray& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected " + std::to_string(rank) + " axes, got " +
                         shape_string(a.shape()));
  }
}

// Splits a shape around `axis` into (outer, axis length, inner) extents.
struct AxisView {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisView view_around(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMajor>;
using View = Eigen::Map<RowMajor>;

}  // namespace

DiffArray matmul(Tape& tape, const DiffArray& a, const DiffArray& b) {
  const bool batched = a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0);
  if (!((a.rank() == 2 && b.rank() == 2) || batched) || a.dim(a.rank() - 1) != b.dim(b.rank() - 2)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t batch = batched ? a.dim(0) : 1;
  const Eigen::Index m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1), n = b.dim(b.rank() - 1);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(batch * m * n);
  for (std::size_t z = 0; z < batch; ++z) {
    View(out.data() + z * m * n, m, n).noalias() =
        ConstView(av.data() + z * m * k, m, k) * ConstView(bv.data() + z * k * n, k, n);
  }
  Shape shape = batched ? Shape{batch, std::size_t(m), std::size_t(n)} : Shape{std::size_t(m), std::size_t(n)};
  return tape.record(std::move(shape), std::move(out), tape.tracks({&a, &b}),
                     [a, b, batch, m, k, n](std::span<const double>, std::span<const double> g) {
                       const auto av = a.values();
                       const auto bv = b.values();
                       std::span<double> ga = a.requires_grad() ? grad_sink(a) : std::span<double>{};
                       std::span<double> gb = b.requires_grad() ? grad_sink(b) : std::span<double>{};
                       for (std::size_t z = 0; z < batch; ++z) {
                         ConstView gz(g.data() + z * m * n, m, n);
                         if (!ga.empty()) {
                           View(ga.data() + z * m * k, m, k).noalias() +=
                               gz * ConstView(bv.data() + z * k * n, k, n).transpose();
                         }
                         if (!gb.empty()) {
                           View(gb.data() + z * k * n, k, n).noalias() +=
                               ConstView(av.data() + z * m * k, m, k).transpose() * gz;
                         }
                       }
                     });
}

DiffArray transpose(Tape& tape, const DiffArray& a) {
  if (a.rank() != 2 && a.rank() != 3) {
    throw DimensionError("transpose: expected rank 2 or 3, got " + shape_string(a.shape()));
  }
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2), n = a.dim(a.rank() - 1);
  const auto av = a.values();
  std::vector<double> out(batch * m * n);
  for (std::size_t z = 0; z < batch; ++z)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[z * m * n + j * m + i] = av[z * m * n + i * n + j];
  Shape shape = a.rank() == 3 ? Shape{batch, n, m} : Shape{n, m};
  return tape.record(std::move(shape), std::move(out), tape.tracks({&a}),
                     [a, batch, m, n](std::span<const double>, std::span<const double> g) {
                       auto ga = grad_sink(a);
                       for (std::size_t z = 0; z < batch; ++z)
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) ga[z * m * n + i * n + j] += g[z * m * n + j * m + i];
                     });
}

DiffArray add(Tape& tape, const DiffArray& a, const DiffArray& b) {
  require_same_shape(a, b, "add");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(a.shape(), std::move(out), tape.tracks({&a, &b}),
                     [a, b](std::span<const double>, std::span<const double> g) {
                       for (const DiffArray* in : {&a, &b}) {
                         if (!in->requires_grad()) continue;
                         auto gi = grad_sink(*in);
                         for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                       }
                     });
}

DiffArray sub(Tape& tape, const DiffArray& a, const DiffArray& b) {
  require_same_shape(a, b, "sub");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return tape.record(a.shape(), std::move(out), tape.tracks({&a, &b}),
                     [a, b](std::span<const double>, std::span<const double> g) {
                       if (a.requires_grad()) {
                         auto ga = grad_sink(a);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (b.requires_grad()) {
                         auto gb = grad_sink(b);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                       }
                     });
}

DiffArray mul(Tape& tape, const DiffArray& a, const DiffArray& b) {
  require_same_shape(a, b, "mul");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record(a.shape(), std::move(out), tape.tracks({&a, &b}),
                     [a, b](std::span<const double>, std::span<const double> g) {
                       const auto av = a.values();
                       const auto bv = b.values();
                       if (a.requires_grad()) {
                         auto ga = grad_sink(a);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                       }
                       if (b.requires_grad()) {
                         auto gb = grad_sink(b);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                       }
                     });
}

DiffArray scale(Tape& tape, const DiffArray& a, double factor) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return tape.record(a.shape(), std::move(out), tape.tracks({&a}),
                     [a, factor](std::span<const double>, std::span<const double> g) {
                       auto ga = grad_sink(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                     });
}

DiffArray add_bias(Tape& tape, const DiffArray& a, const DiffArray& bias) {
  const std::size_t last = a.shape().back();
  const std::size_t width = bias.size();
  if (width != 1 && width != last) {
    throw DimensionError("add_bias: bias of shape " + shape_string(bias.shape()) +
                         " does not broadcast over " + shape_string(a.shape()));
  }
  const auto av = a.values();
  const auto bv = bias.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[width == 1 ? 0 : i % last];
  return tape.record(a.shape(), std::move(out), tape.tracks({&a, &bias}),
                     [a, bias, width, last](std::span<const double>, std::span<const double> g) {
                       if (a.requires_grad()) {
                         auto ga = grad_sink(a);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (bias.requires_grad()) {
                         auto gb = grad_sink(bias);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[width == 1 ? 0 : i % last] += g[i];
                       }
                     });
}

DiffArray tanh(Tape& tape, const DiffArray& a) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  return tape.record(a.shape(), std::move(out), tape.tracks({&a}),
                     [a](std::span<const double> y, std::span<const double> g) {
                       auto ga = grad_sink(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
                     });
}

DiffArray sigmoid(Tape& tape, const DiffArray& a) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    if (x >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  return tape.record(a.shape(), std::move(out), tape.tracks({&a}),
                     [a](std::span<const double> y, std::span<const double> g) {
                       auto ga = grad_sink(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
                     });
}

DiffArray dropout(Tape& tape, const DiffArray& a, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - p);
  const auto av = a.values();
  std::vector<double> mask(av.size());
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] = av[i] * mask[i];
  }
  return tape.record(a.shape(), std::move(out), tape.tracks({&a}),
                     [a, mask = std::move(mask)](std::span<const double>, std::span<const double> g) {
                       auto ga = grad_sink(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
                     });
}

DiffArray softmax_rows(Tape& tape, const DiffArray& a) {
  require_rank(a, 2, "softmax_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      total += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  return tape.record(a.shape(), std::move(out), tape.tracks({&a}),
                     [a, rows, cols](std::span<const double> y, std::span<const double> g) {
                       auto ga = grad_sink(a);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t base = r * cols;
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += g[base + c] * y[base + c];
                         for (std::size_t c = 0; c < cols; ++c) ga[base + c] += y[base + c] * (g[base + c] - dot);
                       }
                     });
}

DiffArray concat(Tape& tape, std::span<const DiffArray> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const DiffArray& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: cannot join " + shape_string(first) + " and " + shape_string(s) +
                           " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const AxisView ov = view_around(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const DiffArray& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = p.shape()[axis] * ov.inner;
    const auto pv = p.values();
    for (std::size_t o = 0; o < ov.outer; ++o) {
      std::copy_n(pv.data() + o * block, block, out.data() + o * ov.length * ov.inner + offset);
    }
    offset += block;
  }
  std::vector<DiffArray> inputs(parts.begin(), parts.end());
  const bool tracked = tape.tracks(parts);
  return tape.record(std::move(out_shape), std::move(out), tracked,
                     [inputs = std::move(inputs), offsets = std::move(offsets), ov, axis](
                         std::span<const double>, std::span<const double> g) {
                       for (std::size_t k = 0; k < inputs.size(); ++k) {
                         const DiffArray& p = inputs[k];
                         if (!p.requires_grad()) continue;
                         auto gp = grad_sink(p);
                         const std::size_t block = p.shape()[axis] * ov.inner;
                         for (std::size_t o = 0; o < ov.outer; ++o) {
                           const double* src = g.data() + o * ov.length * ov.inner + offsets[k];
                           double* dst = gp.data() + o * block;
                           for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

DiffArray slice(Tape& tape, const DiffArray& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " invalid for " + shape_string(s));
  }
  const AxisView v = view_around(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t block = (end - begin) * v.inner;
  const auto av = a.values();
  std::vector<double> out(v.outer * block);
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(av.data() + o * v.length * v.inner + begin * v.inner, block, out.data() + o * block);
  }
  return tape.record(std::move(out_shape), std::move(out), tape.tracks({&a}),
                     [a, v, begin, block](std::span<const double>, std::span<const double> g) {
                       auto ga = grad_sink(a);
                       for (std::size_t o = 0; o < v.outer; ++o) {
                         double* dst = ga.data() + o * v.length * v.inner + begin * v.inner;
                         const double* src = g.data() + o * block;
                         for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                       }
                     });
}

DiffArray gather_last(Tape& tape, const DiffArray& a, std::span<const std::size_t> index) {
  const Shape& s = a.shape();
  const std::size_t last = s.back();
  if (index.empty()) throw DimensionError("gather_last: empty index");
  for (std::size_t i : index) {
    if (i >= last) {
      throw DimensionError("gather_last: index " + std::to_string(i) + " out of range for " + shape_string(s));
    }
  }
  const std::size_t outer = a.size() / last;
  const std::size_t width = index.size();
  Shape out_shape = s;
  out_shape.back() = width;
  const auto av = a.values();
  std::vector<double> out(outer * width);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < width; ++j) out[o * width + j] = av[o * last + index[j]];
  std::vector<std::size_t> idx(index.begin(), index.end());
  return tape.record(std::move(out_shape), std::move(out), tape.tracks({&a}),
                     [a, idx = std::move(idx), outer, last](std::span<const double>, std::span<const double> g) {
                       auto ga = grad_sink(a);
                       const std::size_t width = idx.size();
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t j = 0; j < width; ++j) ga[o * last + idx[j]] += g[o * width + j];
                     });
}

DiffArray reshape(Tape& tape, const DiffArray& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  const auto av = a.values();
  return tape.record(std::move(shape), std::vector<double>(av.begin(), av.end()), tape.tracks({&a}),
                     [a](std::span<const double>, std::span<const double> g) {
                       auto ga = grad_sink(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     });
}

DiffArray stack(Tape& tape, std::span<const DiffArray> parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  const Shape& first = parts[0].shape();
  if (first.size() >= 3) throw DimensionError("stack: result would exceed 3 axes for " + shape_string(first));
  for (const DiffArray& p : parts) {
    if (p.shape() != first) {
      throw DimensionError("stack: shape mismatch " + shape_string(first) + " vs " + shape_string(p.shape()));
    }
  }
  const std::size_t block = shape_numel(first);
  Shape out_shape{parts.size()};
  out_shape.insert(out_shape.end(), first.begin(), first.end());
  std::vector<double> out(parts.size() * block);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    std::copy(pv.begin(), pv.end(), out.begin() + static_cast<std::ptrdiff_t>(k * block));
  }
  std::vector<DiffArray> inputs(parts.begin(), parts.end());
  const bool tracked = tape.tracks(parts);
  return tape.record(std::move(out_shape), std::move(out), tracked,
                     [inputs = std::move(inputs), block](std::span<const double>, std::span<const double> g) {
                       for (std::size_t k = 0; k < inputs.size(); ++k) {
                         if (!inputs[k].requires_grad()) continue;
                         auto gp = grad_sink(inputs[k]);
                         for (std::size_t i = 0; i < block; ++i) gp[i] += g[k * block + i];
                       }
                     });
}

DiffArray sum(Tape& tape, const DiffArray& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return tape.record({1}, {total}, tape.tracks({&a}), [a](std::span<const double>, std::span<const double> g) {
    auto ga = grad_sink(a);
    for (double& x : ga) x += g[0];
  });
}

DiffArray mean(Tape& tape, const DiffArray& a) {
  if (a.size() == 0) throw DimensionError("mean: empty array");
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.size()));
}

DiffArray mse_loss(Tape& tape, const DiffArray& pred, const DiffArray& target) {
  require_same_shape(pred, target, "mse_loss");
  if (pred.size() == 0) throw DimensionError("mse_loss: empty batch");
  const auto pv = pred.values();
  const auto tv = target.values();
  const double n = static_cast<double>(pv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double e = pv[i] - tv[i];
    total += e * e;
  }
  return tape.record({1}, {total / n}, tape.tracks({&pred, &target}),
                     [pred, target, n](std::span<const double>, std::span<const double> g) {
                       const auto pv = pred.values();
                       const auto tv = target.values();
                       const double c = 2.0 * g[0] / n;
                       if (pred.requires_grad()) {
                         auto gp = grad_sink(pred);
                         for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += c * (pv[i] - tv[i]);
                       }
                       if (target.requires_grad()) {
                         auto gt = grad_sink(target);
                         for (std::size_t i = 0; i < pv.size(); ++i) gt[i] -= c * (pv[i] - tv[i]);
                       }
                     });
}

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t dilation) {
  if (kernel == 0 || dilation == 0) throw ConfigError("conv1d: kernel size and dilation must be positive");
  const std::size_t field = dilation * (kernel - 1) + 1;
  if (length < field) {
    throw ConfigError("conv1d: window length " + std::to_string(length) + " is shorter than the receptive field of kernel " +
                      std::to_string(kernel) + " with dilation " + std::to_string(dilation) + "; need T >= " +
                      std::to_string(field));
  }
  return length - field + 1;
}

DiffArray conv1d_bank(Tape& tape, const DiffArray& x, const DiffArray& kernels, std::size_t dilation) {
  require_rank(x, 2, "conv1d_bank (input)");
  require_rank(kernels, 2, "conv1d_bank (kernels)");
  const std::size_t rows = x.dim(0), len = x.dim(1);
  const std::size_t filters = kernels.dim(0), ks = kernels.dim(1);
  const std::size_t out_len = conv1d_output_length(len, ks, dilation);
  const auto xv = x.values();
  const auto kv = kernels.values();
  std::vector<double> out(rows * filters * out_len, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * len;
    for (std::size_t f = 0; f < filters; ++f) {
      const double* kf = kv.data() + f * ks;
      double* o = out.data() + (r * filters + f) * out_len;
      for (std::size_t i = 0; i < ks; ++i) {
        const double w = kf[i];
        const double* xs = xr + dilation * i;
        for (std::size_t j = 0; j < out_len; ++j) o[j] += w * xs[j];
      }
    }
  }
  return tape.record(
      {rows, filters, out_len}, std::move(out), tape.tracks({&x, &kernels}),
      [x, kernels, rows, len, filters, ks, out_len, dilation](std::span<const double>, std::span<const double> g) {
        const auto xv = x.values();
        const auto kv = kernels.values();
        std::span<double> gx = x.requires_grad() ? grad_sink(x) : std::span<double>{};
        std::span<double> gk = kernels.requires_grad() ? grad_sink(kernels) : std::span<double>{};
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t f = 0; f < filters; ++f) {
            const double* go = g.data() + (r * filters + f) * out_len;
            for (std::size_t i = 0; i < ks; ++i) {
              const std::size_t shift = r * len + dilation * i;
              if (!gx.empty()) {
                const double w = kv[f * ks + i];
                for (std::size_t j = 0; j < out_len; ++j) gx[shift + j] += go[j] * w;
              }
              if (!gk.empty()) {
                double s = 0.0;
                for (std::size_t j = 0; j < out_len; ++j) s += go[j] * xv[shift + j];
                gk[f * ks + i] += s;
              }
            }
          }
        }
      });
}

DiffArray conv1d(Tape& tape, const DiffArray& x, const DiffArray& kernel, std::size_t dilation) {
  require_rank(x, 1, "conv1d (input)");
  require_rank(kernel, 1, "conv1d (kernel)");
  const std::size_t out_len = conv1d_output_length(x.dim(0), kernel.dim(0), dilation);
  DiffArray bank = conv1d_bank(tape, reshape(tape, x, {1, x.dim(0)}), reshape(tape, kernel, {1, kernel.dim(0)}),
                               dilation);
  return reshape(tape, bank, {out_len});
}

DiffArray adaptive_max_pool(Tape& tape, const DiffArray& x, std::size_t pool) {
  const Shape& s = x.shape();
  const std::size_t len = s.back();
  if (pool == 0 || len < pool) {
    throw ConfigError("adaptive_max_pool: input length " + std::to_string(len) + " is smaller than pool size " +
                      std::to_string(pool));
  }
  const std::size_t outer = x.size() / len;
  const auto xv = x.values();
  Shape out_shape = s;
  out_shape.back() = pool;
  std::vector<double> out(outer * pool);
  std::vector<std::size_t> argmax(outer * pool);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < pool; ++i) {
      const std::size_t begin = i * len / pool;
      const std::size_t end = (i + 1) * len / pool;
      std::size_t best = begin;
      for (std::size_t j = begin + 1; j < end; ++j) {
        if (xv[o * len + j] > xv[o * len + best]) best = j;
      }
      out[o * pool + i] = xv[o * len + best];
      argmax[o * pool + i] = o * len + best;
    }
  }
  return tape.record(std::move(out_shape), std::move(out), tape.tracks({&x}),
                     [x, argmax = std::move(argmax)](std::span<const double>, std::span<const double> g) {
                       auto gx = grad_sink(x);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                     });
}

DiffArray batch_norm(Tape& tape, const DiffArray& x, const DiffArray& gamma, const DiffArray& beta,
                     BatchNormState& state, Mode mode, std::size_t groups) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("batch_norm: expected [C x L] or [B x C x L], got " + shape_string(x.shape()));
  }
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t channels = x.dim(x.rank() - 2);
  const std::size_t len = x.dim(x.rank() - 1);
  if (gamma.size() != channels || beta.size() != channels || state.running_mean.size() != channels ||
      state.running_var.size() != channels) {
    throw DimensionError("batch_norm: parameters do not match " + std::to_string(channels) + " channels");
  }
  if (groups == 0 || batch % groups != 0) {
    throw DimensionError("batch_norm: " + std::to_string(batch) + " rows do not split into " +
                         std::to_string(groups) + " groups");
  }
  const std::size_t rows = batch / groups;
  const std::size_t population = rows * len;
  if (mode == Mode::train && population < 2) {
    throw ConfigError("batch_norm: train mode needs at least 2 values per channel, got " +
                      std::to_string(population));
  }
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  auto at = [channels, len](std::size_t b, std::size_t c, std::size_t j) { return (b * channels + c) * len + j; };

  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(groups * channels);
  for (std::size_t grp = 0; grp < groups; ++grp) {
    const std::size_t b0 = grp * rows, b1 = b0 + rows;
    for (std::size_t c = 0; c < channels; ++c) {
      double mu = 0.0;
      double var = 0.0;
      if (mode == Mode::train) {
        for (std::size_t b = b0; b < b1; ++b)
          for (std::size_t j = 0; j < len; ++j) mu += xv[at(b, c, j)];
        mu /= static_cast<double>(population);
        for (std::size_t b = b0; b < b1; ++b)
          for (std::size_t j = 0; j < len; ++j) {
            const double d = xv[at(b, c, j)] - mu;
            var += d * d;
          }
        var /= static_cast<double>(population);
        state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
        state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * var;
      } else {
        mu = state.running_mean[c];
        var = state.running_var[c];
      }
      const double is = 1.0 / std::sqrt(var + state.eps);
      inv_std[grp * channels + c] = is;
      for (std::size_t b = b0; b < b1; ++b)
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t k = at(b, c, j);
          xhat[k] = (xv[k] - mu) * is;
          out[k] = gv[c] * xhat[k] + bv[c];
        }
    }
  }
  const bool batch_stats = mode == Mode::train;
  return tape.record(
      x.shape(), std::move(out), tape.tracks({&x, &gamma, &beta}),
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), groups, rows, channels, len,
       batch_stats](std::span<const double>, std::span<const double> g) {
        const auto gv = gamma.values();
        const double n = static_cast<double>(rows * len);
        auto at = [channels, len](std::size_t b, std::size_t c, std::size_t j) { return (b * channels + c) * len + j; };
        std::span<double> gx = x.requires_grad() ? grad_sink(x) : std::span<double>{};
        std::span<double> gg = gamma.requires_grad() ? grad_sink(gamma) : std::span<double>{};
        std::span<double> gb = beta.requires_grad() ? grad_sink(beta) : std::span<double>{};
        for (std::size_t grp = 0; grp < groups; ++grp) {
          const std::size_t b0 = grp * rows, b1 = b0 + rows;
          for (std::size_t c = 0; c < channels; ++c) {
            double sum_g = 0.0;
            double sum_gx = 0.0;
            for (std::size_t b = b0; b < b1; ++b)
              for (std::size_t j = 0; j < len; ++j) {
                const std::size_t k = at(b, c, j);
                sum_g += g[k];
                sum_gx += g[k] * xhat[k];
              }
            if (!gg.empty()) gg[c] += sum_gx;
            if (!gb.empty()) gb[c] += sum_g;
            if (gx.empty()) continue;
            const double s = gv[c] * inv_std[grp * channels + c];
            for (std::size_t b = b0; b < b1; ++b)
              for (std::size_t j = 0; j < len; ++j) {
                const std::size_t k = at(b, c, j);
                if (batch_stats) {
                  gx[k] += s * (g[k] - sum_g / n - xhat[k] * sum_gx / n);
                } else {
                  gx[k] += s * g[k];
                }
              }
          }
        }
      });
}

}  // namespace epi::ops
