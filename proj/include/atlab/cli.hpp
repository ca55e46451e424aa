#pragma once

#include <string>
#include <vector>

namespace atlab::cli {

/// Entry point of the at_lab binary: `train`, `eval` and `landscape` subcommands.
/// Returns the process exit code (0 iff every requested output was written).
int run(const std::vector<std::string>& args);

/// Evaluation worker cap from AT_LAB_THREADS, else the hardware concurrency.
int threads_from_env();

}  // namespace atlab::cli
