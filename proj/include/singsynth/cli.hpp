#pragma once

#include <string>
#include <vector>

namespace singsynth::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

// Subcommands: gen-corpus, train, synth, eval, plot.
int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args);

}  // namespace singsynth::cli
