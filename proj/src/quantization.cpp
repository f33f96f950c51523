// SPDX-License-Identifier: Apache-2.0
#include "rqmoe/quantization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "rqmoe/errors.hpp"

namespace rqmoe {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// Round half to even, independent of the current FP rounding mode.
double round_half_even(double x) {
  const double fl = std::floor(x);
  const double diff = x - fl;
  if (diff < 0.5) return fl;
  if (diff > 0.5) return fl + 1.0;
  return std::fmod(fl, 2.0) == 0.0 ? fl : fl + 1.0;
}

constexpr std::uint16_t kHalfMaxCode = 0x7BFF;
constexpr int kHalfBias = 15;
constexpr int kHalfMantissaBits = 10;

}  // namespace

std::string_view to_string(PrecisionScheme scheme) {
  switch (scheme) {
    case PrecisionScheme::Full32: return "full32";
    case PrecisionScheme::Half16: return "half16";
    case PrecisionScheme::Int8Sym: return "int8";
  }
  return "?";
}

std::optional<PrecisionScheme> parse_scheme(std::string_view text) {
  if (text == "full32") return PrecisionScheme::Full32;
  if (text == "half16") return PrecisionScheme::Half16;
  if (text == "int8") return PrecisionScheme::Int8Sym;
  return std::nullopt;
}

int precision_rank(PrecisionScheme scheme) {
  switch (scheme) {
    case PrecisionScheme::Full32: return 2;
    case PrecisionScheme::Half16: return 1;
    case PrecisionScheme::Int8Sym: return 0;
  }
  return -1;
}

std::size_t bytes_per_element(PrecisionScheme scheme) {
  switch (scheme) {
    case PrecisionScheme::Full32: return 4;
    case PrecisionScheme::Half16: return 2;
    case PrecisionScheme::Int8Sym: return 1;
  }
  return 0;
}

std::uint16_t encode_half(double value) {
  if (std::isnan(value)) throw ArgumentError("encode_half: NaN");
  const std::uint16_t sign = std::signbit(value) ? 0x8000 : 0;
  const double a = std::fabs(value);
  if (a > kHalfMax) return sign | kHalfMaxCode;

  // Subnormal range: multiples of 2^-24. A result of 1024 is exactly the
  // smallest normal's encoding.
  if (a < std::ldexp(1.0, 1 - kHalfBias)) {
    const double q = round_half_even(std::ldexp(a, 24));
    return sign | static_cast<std::uint16_t>(q);
  }

  int exp2 = 0;
  std::frexp(a, &exp2);  // a = f * 2^exp2, f in [0.5, 1)
  int e = exp2 - 1;
  double frac = round_half_even((std::ldexp(a, -e) - 1.0) * (1 << kHalfMantissaBits));
  if (frac == (1 << kHalfMantissaBits)) {
    frac = 0.0;
    ++e;
  }
  const int biased = e + kHalfBias;
  if (biased >= 31) return sign | kHalfMaxCode;
  return sign | static_cast<std::uint16_t>((biased << kHalfMantissaBits) |
                                           static_cast<int>(frac));
}

double decode_half(std::uint16_t code) {
  const bool negative = (code & 0x8000) != 0;
  const int biased = (code >> kHalfMantissaBits) & 0x1F;
  const int mantissa = code & 0x3FF;
  double magnitude;
  if (biased == 0) {
    magnitude = std::ldexp(static_cast<double>(mantissa), -24);
  } else if (biased == 31) {
    magnitude = mantissa == 0 ? HUGE_VAL : std::nan("");
  } else {
    magnitude = std::ldexp(1.0 + mantissa / 1024.0, biased - kHalfBias);
  }
  return negative ? -magnitude : magnitude;
}

QuantizedMatrix::QuantizedMatrix(std::size_t rows, std::size_t cols, QuantPayload payload)
    : rows_(rows), cols_(cols), payload_(std::move(payload)) {
  const std::size_t n = rows * cols;
  std::visit(Overloaded{
                 [&](const Full32Payload& p) {
                   if (p.values.size() != n) throw ShapeError("full32 payload length mismatch");
                   require_finite(p.values, "full32 payload");
                 },
                 [&](const Half16Payload& p) {
                   if (p.codes.size() != n) throw ShapeError("half16 payload length mismatch");
                   for (auto c : p.codes) {
                     if (((c >> kHalfMantissaBits) & 0x1F) == 31) {
                       throw ArgumentError("half16 payload holds a non-finite code");
                     }
                   }
                 },
                 [&](const Int8Payload& p) {
                   if (p.codes.size() != n) throw ShapeError("int8 payload length mismatch");
                   if (p.scales.size() != rows) throw ShapeError("int8 scale count mismatch");
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double s = p.scales[r];
                     if (!std::isfinite(s) || s < 0.0) throw ArgumentError("int8 scale invalid");
                     for (std::size_t j = 0; j < cols; ++j) {
                       const int c = p.codes[r * cols + j];
                       if (c < -127 || c > 127) throw ArgumentError("int8 code out of range");
                       if (s == 0.0 && c != 0) {
                         throw ArgumentError("int8 row with zero scale has non-zero codes");
                       }
                     }
                   }
                 },
             },
             payload_);
}

PrecisionScheme QuantizedMatrix::scheme() const noexcept {
  switch (payload_.index()) {
    case 1: return PrecisionScheme::Half16;
    case 2: return PrecisionScheme::Int8Sym;
    default: return PrecisionScheme::Full32;
  }
}

QuantizedMatrix quantize(const Matrix& w, PrecisionScheme scheme) {
  require_finite(w.values(), "quantize");
  switch (scheme) {
    case PrecisionScheme::Full32:
      return {w.rows(), w.cols(), Full32Payload{w.values()}};
    case PrecisionScheme::Half16: {
      Half16Payload p;
      p.codes.reserve(w.values().size());
      for (double v : w.values()) p.codes.push_back(encode_half(v));
      return {w.rows(), w.cols(), std::move(p)};
    }
    case PrecisionScheme::Int8Sym: {
      Int8Payload p;
      p.codes.resize(w.values().size(), 0);
      p.scales.resize(w.rows(), 0.0);
      for (std::size_t r = 0; r < w.rows(); ++r) {
        const auto row = w.row(r);
        double max_abs = 0.0;
        for (double v : row) max_abs = std::max(max_abs, std::fabs(v));
        if (max_abs == 0.0) continue;
        const double scale = max_abs / 127.0;
        p.scales[r] = scale;
        for (std::size_t j = 0; j < row.size(); ++j) {
          const double q = std::clamp(round_half_even(row[j] / scale), -127.0, 127.0);
          p.codes[r * w.cols() + j] = static_cast<std::int8_t>(q);
        }
      }
      return {w.rows(), w.cols(), std::move(p)};
    }
  }
  throw ArgumentError("quantize: unknown scheme");
}

Matrix dequantize(const QuantizedMatrix& q) {
  std::vector<double> values(q.rows() * q.cols());
  std::visit(Overloaded{
                 [&](const Full32Payload& p) { values = p.values; },
                 [&](const Half16Payload& p) {
                   for (std::size_t i = 0; i < values.size(); ++i) {
                     values[i] = decode_half(p.codes[i]);
                   }
                 },
                 [&](const Int8Payload& p) {
                   for (std::size_t r = 0; r < q.rows(); ++r) {
                     for (std::size_t j = 0; j < q.cols(); ++j) {
                       const std::size_t i = r * q.cols() + j;
                       values[i] = p.codes[i] * p.scales[r];
                     }
                   }
                 },
             },
             q.payload());
  return Matrix(q.rows(), q.cols(), std::move(values));
}

std::size_t storage_bytes(PrecisionScheme scheme, std::size_t rows, std::size_t cols) {
  std::size_t bytes = bytes_per_element(scheme) * rows * cols;
  if (scheme == PrecisionScheme::Int8Sym) bytes += 4 * rows;
  return bytes;
}

std::size_t storage_bytes(const QuantizedMatrix& q) {
  return storage_bytes(q.scheme(), q.rows(), q.cols());
}

}  // namespace rqmoe
