#pragma once

#include <iosfwd>

namespace epi {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

// Runs `epiforecast <subcommand> ...`: train, evaluate, ablate, predict,
// baselines.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace epi
