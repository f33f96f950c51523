// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace rqmoe {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace rqmoe
