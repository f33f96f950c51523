// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sstream>

#include "common/test_util.hpp"
#include "rqmoe/errors.hpp"
#include "rqmoe/expert_analysis.hpp"
#include "rqmoe/streaming.hpp"
#include "rqmoe/workload.hpp"

using namespace rqmoe;

namespace {

MoeModel skewed_model(std::size_t layers = 2) {
  return gen_model(17, {layers, 8, 1, 8}, SkewSpec{SkewMode::Zipf, 1.0, 3.0});
}

StreamConfig config(const MoeModel& model, StreamStrategy strategy) {
  StreamConfig cfg;
  cfg.strategy = strategy;
  cfg.quantize_ids.assign(model.layer_count(), 1);
  return cfg;
}

}  // namespace

TEST_CASE("split_segments remainder goes to the last segment") {
  const Matrix tokens = gen_tokens(1, 23, 2);
  const auto seg = split_segments(tokens, 5);
  REQUIRE(seg.size() == 5);
  for (std::size_t t = 0; t < 4; ++t) CHECK(seg[t].rows() == 4);
  CHECK(seg[4].rows() == 7);
  CHECK(seg[4].row(6)[1] == tokens(22, 1));
  CHECK(seg[1].row(0)[0] == tokens(4, 0));
  CHECK_THROWS_AS((void)split_segments(tokens, 1), ArgumentError);
  CHECK_THROWS_AS((void)split_segments(gen_tokens(1, 3, 2), 5), InsufficientStreamError);
}

TEST_CASE("adversarial stream keeps only heavy-hitter tokens") {
  const MoeModel model = skewed_model();
  const Matrix tokens = gen_tokens(2, 500, 8);
  const auto counts = testing::recount_origins(model, tokens);
  const std::size_t heavy = testing::argmax_lowest(counts[0]);
  const auto stream = build_adversarial_stream(model, tokens, 10);
  REQUIRE(stream.size() == 10);
  std::size_t total = 0;
  for (const Matrix& seg : stream) {
    total += seg.rows();
    const auto c = testing::recount_origins(model, seg);
    CHECK(c[0][heavy] == seg.rows());
  }
  CHECK(total == counts[0][heavy]);
  CHECK(stream[0].rows() == counts[0][heavy] / 10);
}

TEST_CASE("adversarial stream needs enough tokens") {
  const MoeModel model = skewed_model();
  CHECK_THROWS_AS((void)build_adversarial_stream(model, gen_tokens(2, 5, 8), 10),
                  InsufficientStreamError);
}

TEST_CASE("replica choice follows the history of R&Q counts") {
  const MoeModel model = gen_model(23, {2, 6, 2, 6}, SkewSpec{SkewMode::Zipf, 0.5, 0.4});
  const auto stream = split_segments(gen_tokens(3, 400, 6), 8);
  for (auto strategy : {StreamStrategy::Cumulative, StreamStrategy::Window1}) {
    StreamConfig cfg = config(model, strategy);
    cfg.timesteps = 8;
    const StreamReport r = run_stream(model, stream, cfg);
    REQUIRE(r.timesteps() == 8);
    for (std::size_t l = 0; l < 2; ++l) {
      CHECK_FALSE(r.replica_choice[0][l].has_value());
      std::vector<std::uint64_t> hist(6, 0);
      for (std::size_t t = 1; t < 8; ++t) {
        const auto& prev = r.rq_traces[t - 1].layers[l].origin_counts;
        if (strategy == StreamStrategy::Window1) hist.assign(6, 0);
        for (std::size_t j = 0; j < 6; ++j) hist[j] += prev[j];
        REQUIRE(r.replica_choice[t][l].has_value());
        CHECK(*r.replica_choice[t][l] == testing::argmax_lowest(hist));
      }
    }
  }
}

TEST_CASE("cumulative lis matches merged traces when the replica never moves") {
  const MoeModel model = skewed_model();
  const Matrix tokens = gen_tokens(4, 600, 8);
  const auto stream = build_adversarial_stream(model, tokens, 10);
  StreamConfig cfg = config(model, StreamStrategy::Cumulative);
  cfg.warm_start = find_heavy_hitters(model, tokens);
  const StreamReport r = run_stream(model, stream, cfg);
  RoutingTrace rq = r.rq_traces[0];
  RoutingTrace raw = r.raw_traces[0];
  for (std::size_t t = 0; t < 10; ++t) {
    if (t > 0) {
      rq = merge_traces(rq, r.rq_traces[t]);
      raw = merge_traces(raw, r.raw_traces[t]);
    }
    for (std::size_t l = 0; l < 2; ++l) {
      REQUIRE(r.replica_choice[t][l] == cfg.warm_start->experts[l]);
      CHECK(r.rq[t][l].cumulative_lis == lis(rq, l, Granularity::Instance));
      CHECK(r.raw[t][l].cumulative_lis == lis(raw, l, Granularity::Instance));
      CHECK(r.rq[t][l].instant_lis == lis(r.rq_traces[t], l, Granularity::Instance));
    }
  }
}

TEST_CASE("both strategies agree when one expert dominates every segment") {
  const MoeModel model = skewed_model();
  const auto stream = build_adversarial_stream(model, gen_tokens(5, 800, 8), 10);
  const StreamReport a = run_stream(model, stream, config(model, StreamStrategy::Cumulative));
  const StreamReport b = run_stream(model, stream, config(model, StreamStrategy::Window1));
  CHECK(a.replica_choice == b.replica_choice);
  CHECK(a.rq == b.rq);
  for (std::size_t t = 1; t < 10; ++t)
    for (std::size_t l = 0; l < 2; ++l) CHECK(a.rq[t][l].cumulative_lis < a.raw[t][l].cumulative_lis);
}

TEST_CASE("disabling both actions reproduces the raw pipeline") {
  const MoeModel model = skewed_model();
  const auto stream = split_segments(gen_tokens(6, 300, 8), 10);
  StreamConfig cfg = config(model, StreamStrategy::Cumulative);
  cfg.enable_replication = false;
  cfg.enable_quantization = false;
  const StreamReport r = run_stream(model, stream, cfg);
  CHECK(r.rq == r.raw);
  for (const auto& row : r.replica_choice)
    for (const auto& c : row) CHECK_FALSE(c.has_value());
}

TEST_CASE("run_stream validates its inputs") {
  const MoeModel model = skewed_model();
  const auto stream = split_segments(gen_tokens(6, 100, 8), 10);
  StreamConfig cfg = config(model, StreamStrategy::Cumulative);
  cfg.timesteps = 9;
  CHECK_THROWS_AS((void)run_stream(model, stream, cfg), ArgumentError);
  cfg = config(model, StreamStrategy::Cumulative);
  cfg.quantize_ids = {0};
  CHECK_THROWS_AS((void)run_stream(model, stream, cfg), ArgumentError);
  cfg = config(model, StreamStrategy::Cumulative);
  cfg.replica_scheme = PrecisionScheme::Full32;
  CHECK_THROWS_AS((void)run_stream(model, stream, cfg), ArgumentError);
}

TEST_CASE("stream CSV layout") {
  const MoeModel model = skewed_model(1);
  const auto stream = split_segments(gen_tokens(7, 40, 8), 2);
  StreamConfig cfg = config(model, StreamStrategy::Window1);
  cfg.timesteps = 2;
  std::ostringstream os;
  write_stream_csv(os, run_stream(model, stream, cfg));
  std::istringstream is(os.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "timestep,layer,variant,strategy,cumulative_lis,instant_lis,replica_origin");
  CHECK(lines[1].rfind("1,0,raw,window1,", 0) == 0);
  CHECK(lines[1].back() == ',');
  CHECK(lines[2].back() == ',');
  CHECK(lines[4].rfind("2,0,rq,window1,", 0) == 0);
  CHECK(lines[4].back() != ',');
}
