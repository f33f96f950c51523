// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace rqmoe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Entry point shared by the binary and the CLI tests.
int run(int argc, const char* const* argv);

}  // namespace rqmoe::cli
