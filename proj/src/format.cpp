// SPDX-License-Identifier: Apache-2.0
#include "rqmoe/format.hpp"

#include <charconv>

namespace rqmoe {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace rqmoe
