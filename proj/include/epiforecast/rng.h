#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace epi {

// Seeded random stream. Distributions are written out by hand so a given
// seed produces the same sequence regardless of the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one draw per call.
  double normal(double mean = 0.0, double sd = 1.0);

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

// Deterministic stream derivation, e.g. (run seed, epoch) -> epoch seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace epi
