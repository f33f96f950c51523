// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "common/half_golden.hpp"
#include "common/test_util.hpp"
#include "rqmoe/errors.hpp"
#include "rqmoe/quantization.hpp"

using namespace rqmoe;

namespace {

std::uint64_t bits(double v) {
  std::uint64_t b;
  std::memcpy(&b, &v, sizeof b);
  return b;
}

}  // namespace

TEST_CASE("scheme names round-trip") {
  for (auto s : {PrecisionScheme::Full32, PrecisionScheme::Half16, PrecisionScheme::Int8Sym})
    CHECK(parse_scheme(to_string(s)) == s);
  CHECK(to_string(PrecisionScheme::Int8Sym) == "int8");
  CHECK_FALSE(parse_scheme("fp8").has_value());
  CHECK(lower_precision(PrecisionScheme::Int8Sym, PrecisionScheme::Half16));
  CHECK(lower_precision(PrecisionScheme::Half16, PrecisionScheme::Full32));
  CHECK_FALSE(lower_precision(PrecisionScheme::Half16, PrecisionScheme::Half16));
}

TEST_CASE("binary16 golden encodings") {
  for (const auto& g : testing::kHalfGolden) {
    CAPTURE(g.value);
    CHECK(encode_half(g.value) == g.code);
  }
  CHECK_THROWS_AS((void)encode_half(std::nan("")), ArgumentError);
}

TEST_CASE("binary16 decode examples") {
  CHECK(decode_half(0x3C00) == 1.0);
  CHECK(decode_half(0x7BFF) == 65504.0);
  CHECK(decode_half(0x0001) == std::ldexp(1.0, -24));
  CHECK(decode_half(0x03FF) == 1023.0 * std::ldexp(1.0, -24));
  CHECK(bits(decode_half(0x8000)) == bits(-0.0));
  CHECK(decode_half(0x3555) == 0.333251953125);
}

TEST_CASE("every finite binary16 code decodes and re-encodes to itself") {
  for (std::uint32_t c = 0; c < 0x10000; ++c) {
    const auto code = static_cast<std::uint16_t>(c);
    if ((code & 0x7C00) == 0x7C00) continue;  // inf and NaN are never produced
    CHECK(encode_half(decode_half(code)) == code);
  }
}

TEST_CASE("Full32 payload keeps values exactly") {
  CounterRng rng(21);
  const Matrix w = testing::random_matrix(rng, 5, 7, -1e6, 1e6);
  const QuantizedMatrix q = quantize(w, PrecisionScheme::Full32);
  CHECK(q.scheme() == PrecisionScheme::Full32);
  CHECK(dequantize(q) == w);
}

TEST_CASE("Int8Sym example") {
  const Matrix w = Matrix::from_rows({{1.0, -0.5, 0.25}, {0.0, 0.0, 0.0}});
  const QuantizedMatrix q = quantize(w, PrecisionScheme::Int8Sym);
  const auto& p = std::get<Int8Payload>(q.payload());
  CHECK(p.scales[0] == 1.0 / 127.0);
  CHECK(p.scales[1] == 0.0);
  CHECK(p.codes == std::vector<std::int8_t>{127, -64, 32, 0, 0, 0});
  const Matrix d = dequantize(q);
  CHECK(d(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(d(1, 2) == 0.0);
}

TEST_CASE("Int8Sym error within half a step") {
  CounterRng rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix w = testing::random_matrix(rng, 1 + rng.uniform_below(6),
                                            1 + rng.uniform_below(10), -5.0, 5.0);
    const QuantizedMatrix q = quantize(w, PrecisionScheme::Int8Sym);
    const auto& p = std::get<Int8Payload>(q.payload());
    const Matrix d = dequantize(q);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double mx = 0.0;
      for (double v : w.row(r)) mx = std::max(mx, std::abs(v));
      CHECK(p.scales[r] == mx / 127.0);
      for (std::size_t c = 0; c < w.cols(); ++c)
        CHECK(std::abs(d(r, c) - w(r, c)) <= p.scales[r] / 2.0 + 1e-12);
    }
  }
}

TEST_CASE("Half16 relative error on the normal range") {
  CounterRng rng(23);
  const double bound = std::ldexp(1.0, -11);
  for (int i = 0; i < 20000; ++i) {
    const double mag = std::ldexp(1.0 + rng.uniform(), -14 + static_cast<int>(rng.uniform_below(30)));
    if (mag > kHalfMax) continue;
    const double v = rng.uniform() < 0.5 ? -mag : mag;
    const double back = decode_half(encode_half(v));
    CHECK(std::abs(back - v) <= bound * std::abs(v));
  }
}

TEST_CASE("quantization is idempotent") {
  CounterRng rng(24);
  for (auto s : {PrecisionScheme::Full32, PrecisionScheme::Half16, PrecisionScheme::Int8Sym}) {
    for (int trial = 0; trial < 50; ++trial) {
      const Matrix w = testing::random_matrix(rng, 4, 6, -3.0, 3.0);
      const QuantizedMatrix q = quantize(w, s);
      CHECK(quantize(dequantize(q), s) == q);
    }
  }
}

TEST_CASE("storage bytes for an 8x8 matrix") {
  CHECK(storage_bytes(PrecisionScheme::Full32, 8, 8) == 256);
  CHECK(storage_bytes(PrecisionScheme::Half16, 8, 8) == 128);
  CHECK(storage_bytes(PrecisionScheme::Int8Sym, 8, 8) == 96);
  const Matrix w(8, 8);
  CHECK(storage_bytes(quantize(w, PrecisionScheme::Int8Sym)) == 96);
  CHECK(bytes_per_element(PrecisionScheme::Half16) == 2);
}

TEST_CASE("quantized matrix validates payloads") {
  CHECK_THROWS_AS(QuantizedMatrix(2, 2, Full32Payload{{1.0, 2.0, 3.0}}), ShapeError);
  CHECK_THROWS_AS(QuantizedMatrix(1, 2, Int8Payload{{-128, 0}, {1.0}}), ArgumentError);
  CHECK_THROWS_AS(QuantizedMatrix(1, 2, Int8Payload{{1, 0}, {0.0}}), ArgumentError);
  CHECK_THROWS_AS(QuantizedMatrix(2, 1, Int8Payload{{1, 0}, {1.0}}), ShapeError);
}
