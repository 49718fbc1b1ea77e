#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dtn {

/// Benchmark CLI: builds solution operators, measures build/solve times,
/// memory and accuracy, and emits one CSV row per (problem, n, engine).
/// Exit codes: 0 success, 2 bad arguments, 3 build failure (singularity),
/// 4 accuracy check failure under --check.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace dtn
