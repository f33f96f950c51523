// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rqmoe/numerics.hpp"

namespace rqmoe {

enum class PrecisionScheme { Full32, Half16, Int8Sym };

std::string_view to_string(PrecisionScheme scheme);
std::optional<PrecisionScheme> parse_scheme(std::string_view text);

/// Full32 > Half16 > Int8Sym.
int precision_rank(PrecisionScheme scheme);
inline bool lower_precision(PrecisionScheme a, PrecisionScheme b) {
  return precision_rank(a) < precision_rank(b);
}

/// Bytes per element for storage accounting, excluding per-row scales.
std::size_t bytes_per_element(PrecisionScheme scheme);

// Binary16 helpers. Encoding rounds to nearest, ties to even, and saturates
// finite magnitudes above 65504 to 65504.
inline constexpr double kHalfMax = 65504.0;
std::uint16_t encode_half(double value);
double decode_half(std::uint16_t code);

struct Full32Payload {
  std::vector<double> values;
  friend bool operator==(const Full32Payload&, const Full32Payload&) = default;
};

struct Half16Payload {
  std::vector<std::uint16_t> codes;
  friend bool operator==(const Half16Payload&, const Half16Payload&) = default;
};

struct Int8Payload {
  std::vector<std::int8_t> codes;  // |code| <= 127
  std::vector<double> scales;      // one per row, >= 0
  friend bool operator==(const Int8Payload&, const Int8Payload&) = default;
};

using QuantPayload = std::variant<Full32Payload, Half16Payload, Int8Payload>;

class QuantizedMatrix {
 public:
  QuantizedMatrix() = default;
  /// Validates payload length, code range, and zero-scale rows.
  QuantizedMatrix(std::size_t rows, std::size_t cols, QuantPayload payload);

  PrecisionScheme scheme() const noexcept;
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  const QuantPayload& payload() const noexcept { return payload_; }

  friend bool operator==(const QuantizedMatrix&, const QuantizedMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  QuantPayload payload_;
};

QuantizedMatrix quantize(const Matrix& w, PrecisionScheme scheme);
Matrix dequantize(const QuantizedMatrix& q);

/// Full32: 4 B/element. Half16: 2 B/element. Int8Sym: 1 B/element + 4 B/row.
std::size_t storage_bytes(const QuantizedMatrix& q);
std::size_t storage_bytes(PrecisionScheme scheme, std::size_t rows, std::size_t cols);

}  // namespace rqmoe
