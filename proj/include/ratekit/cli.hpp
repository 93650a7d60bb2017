#pragma once

#include <iosfwd>

namespace ratekit {

inline constexpr const char* kVersion = "0.1.0";

/// Entry point of the `ratekit` tool. Returns the process exit code:
/// 0 success, 1 usage or input error, 2 non-convergence (output still written).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ratekit
