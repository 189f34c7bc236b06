#pragma once

// Independent reference implementations used only by tests. They follow the
// textbook definitions directly and never call into the library's kernels.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "epiforecast/tensor.h"

namespace epi::oracle {

// out[j] = sum_i k[i] * x[j + d*i], valid positions only.
inline std::vector<double> conv1d(const std::vector<double>& x, const std::vector<double>& k, std::size_t d) {
  std::vector<double> out;
  for (std::size_t j = 0; j + d * (k.size() - 1) < x.size(); ++j) {
    long double acc = 0;
    for (std::size_t i = 0; i < k.size(); ++i) acc += static_cast<long double>(k[i]) * x[j + d * i];
    out.push_back(static_cast<double>(acc));
  }
  return out;
}

// Index j belongs to segment i iff i*L < (j+1)*P <= (i+1)*L.
inline std::vector<double> adaptive_max_pool(const std::vector<double>& x, std::size_t P) {
  const std::size_t L = x.size();
  std::vector<double> out;
  for (std::size_t i = 0; i < P; ++i) {
    bool seen = false;
    double best = 0;
    for (std::size_t j = 0; j < L; ++j) {
      if (i * L < (j + 1) * P && (j + 1) * P <= (i + 1) * L) {
        if (!seen || x[j] > best) best = x[j];
        seen = true;
      }
    }
    out.push_back(best);
  }
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& row) {
  long double total = 0;
  for (double v : row) total += std::exp(static_cast<long double>(v));
  std::vector<double> out;
  for (double v : row) out.push_back(static_cast<double>(std::exp(static_cast<long double>(v)) / total));
  return out;
}

// Gradient check by central differences.
//
// `build` must record a scalar on the given tape from the inputs; it is also
// called with a non-recording tape for the perturbed evaluations, so it must
// be deterministic. Returns the largest per-input relative error
// ||analytic - numeric|| / max(||analytic||, ||numeric||).
inline double gradient_check(const std::function<DiffArray(Tape&)>& build, std::vector<DiffArray> inputs,
                             double eps = 1e-5) {
  for (DiffArray& in : inputs) in.clear_grad();
  {
    Tape tape;
    DiffArray root = build(tape);
    tape.backward(root);
  }
  double worst = 0.0;
  for (DiffArray& in : inputs) {
    std::vector<double> analytic = in.has_grad() ? std::vector<double>(in.grad().begin(), in.grad().end())
                                                 : std::vector<double>(in.size(), 0.0);
    double diff2 = 0, a2 = 0, n2 = 0;
    auto vals = in.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      Tape plus(false);
      const double fp = build(plus).item();
      vals[i] = saved - eps;
      Tape minus(false);
      const double fm = build(minus).item();
      vals[i] = saved;
      const double numeric = (fp - fm) / (2 * eps);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

}  // namespace epi::oracle
