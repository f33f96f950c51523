// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "common/test_util.hpp"
#include "rqmoe/errors.hpp"
#include "rqmoe/workload.hpp"

using namespace rqmoe;

namespace {

double layer0_lis(const MoeModel& model, const Matrix& tokens) {
  RoutingTrace trace;
  (void)forward_model(model, tokens, &trace);
  return lis(trace, 0, Granularity::Origin);
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  const ModelShape shape{2, 6, 2, 5};
  const SkewSpec skew{SkewMode::Zipf, 1.0, 1.0};
  CHECK(gen_model(5, shape, skew) == gen_model(5, shape, skew));
  CHECK_FALSE(gen_model(5, shape, skew) == gen_model(6, shape, skew));
  CHECK(gen_tokens(5, 10, 3) == gen_tokens(5, 10, 3));
  CHECK_FALSE(gen_tokens(5, 10, 3) == gen_tokens(6, 10, 3));
  const MoeModel m = gen_model(5, shape, skew);
  CHECK(m.metadata().name == "synthetic");
  CHECK(m.metadata().seed == 5);
  CHECK(m.layer_count() == 2);
  CHECK(m.layer(1).top_k() == 2);
}

TEST_CASE("generator argument checks") {
  CHECK_THROWS_AS((void)gen_tokens(1, 0, 3), ArgumentError);
  CHECK_THROWS_AS((void)gen_model(1, {1, 4, 4, 3}, {}), ArgumentError);
  CHECK_THROWS_AS((void)gen_model(1, {1, 4, 1, 3}, SkewSpec{SkewMode::Uniform, 1.0, 0.0}),
                  ArgumentError);
  CHECK_THROWS_AS((void)gen_model(1, {1, 4, 1, 3}, SkewSpec{SkewMode::Zipf, -1.0, 1.0}),
                  ArgumentError);
  CHECK(parse_skew_mode("directional") == SkewMode::Directional);
  CHECK_FALSE(parse_skew_mode("gauss").has_value());
}

TEST_CASE("token moments") {
  const Matrix t = gen_tokens(99, 100000, 1);
  double sum = 0.0;
  double sq = 0.0;
  for (double v : t.values()) {
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / 1e5) <= 0.02);
  CHECK(std::abs(sq / 1e5 - 1.0) <= 0.02);
}

TEST_CASE("zipf bias follows the expert rank") {
  const MoeModel m = gen_model(3, {1, 4, 1, 3}, SkewSpec{SkewMode::Zipf, 2.0, 8.0});
  CHECK(m.layer(0).router().bias == std::vector<double>{8.0, 2.0, 8.0 / 9.0, 0.5});
  const MoeModel u = gen_model(3, {1, 4, 1, 3}, {});
  CHECK(u.layer(0).router().bias == std::vector<double>(4, 0.0));
}

TEST_CASE("stronger skew raises imbalance") {
  const Matrix tokens = gen_tokens(12, 2000, 8);
  double prev = 0.0;
  for (double b : {0.0, 1.0, 2.0, 4.0}) {
    const double v = layer0_lis(gen_model(21, {1, 8, 1, 8}, SkewSpec{SkewMode::Zipf, 1.0, b}), tokens);
    CHECK(v > prev);
    prev = v;
  }
  CHECK(layer0_lis(gen_model(21, {1, 8, 1, 8}, SkewSpec{SkewMode::Zipf, 1.0, 40.0}), tokens) == 8.0);
}

TEST_CASE("directional skew favours low-index experts") {
  const Matrix tokens = gen_tokens(13, 2000, 8);
  const double flat = layer0_lis(gen_model(22, {1, 8, 1, 8}, {}), tokens);
  const double tilted =
      layer0_lis(gen_model(22, {1, 8, 1, 8}, SkewSpec{SkewMode::Directional, 1.0, 4.0}), tokens);
  CHECK(tilted > flat);
}

TEST_CASE("with_base_scheme re-stores every expert") {
  const MoeModel m = gen_model(4, {2, 4, 1, 3}, {});
  const MoeModel h = with_base_scheme(m, PrecisionScheme::Half16);
  for (const auto& l : h.layers())
    for (const auto& inst : l.instances()) CHECK(inst.weights.scheme() == PrecisionScheme::Half16);
  CHECK(h.layer(0).router() == m.layer(0).router());
}
