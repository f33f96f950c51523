// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include "rqmoe/expert_analysis.hpp"
#include "rqmoe/moe_model.hpp"
#include "rqmoe/quantization.hpp"
#include "rqmoe/routing_metrics.hpp"

namespace rqmoe {

inline constexpr std::size_t kDefaultTimesteps = 10;

enum class StreamStrategy {
  Cumulative,  // replica chosen from all earlier segments
  Window1,     // replica chosen from the previous segment only
};

std::string_view to_string(StreamStrategy strategy);
std::optional<StreamStrategy> parse_strategy(std::string_view text);

struct StreamConfig {
  std::size_t timesteps = kDefaultTimesteps;
  StreamStrategy strategy = StreamStrategy::Cumulative;
  std::vector<std::size_t> quantize_ids;  // fixed for the whole stream, one per layer
  PrecisionScheme replica_scheme = PrecisionScheme::Half16;
  PrecisionScheme quant_scheme = PrecisionScheme::Half16;
  std::optional<HeavyHitterList> warm_start;  // replica at t = 1
  bool enable_replication = true;
  bool enable_quantization = true;
};

struct StreamPoint {
  double cumulative_lis = 0.0;
  double instant_lis = 0.0;
  friend bool operator==(const StreamPoint&, const StreamPoint&) = default;
};

struct StreamReport {
  StreamStrategy strategy = StreamStrategy::Cumulative;
  // [timestep][layer]; timestep 0 is the first segment.
  std::vector<std::vector<StreamPoint>> raw;
  std::vector<std::vector<StreamPoint>> rq;
  std::vector<std::vector<std::optional<std::size_t>>> replica_choice;
  // Per-segment traces of each pipeline, kept for auditing.
  std::vector<RoutingTrace> raw_traces;
  std::vector<RoutingTrace> rq_traces;

  std::size_t timesteps() const noexcept { return raw.size(); }
};

/// Tokens whose layer-0 top-1 expert is the layer-0 heavy hitter over the
/// full token set, split into `timesteps` contiguous segments of
/// floor(n / T) rows; the last segment takes the remainder.
std::vector<Matrix> build_adversarial_stream(const MoeModel& model, const Matrix& tokens,
                                             std::size_t timesteps);

/// Contiguous split of `tokens` with the same remainder rule.
std::vector<Matrix> split_segments(const Matrix& tokens, std::size_t timesteps);

StreamReport run_stream(const MoeModel& model, const std::vector<Matrix>& stream,
                        const StreamConfig& cfg);

/// CSV: timestep,layer,variant,strategy,cumulative_lis,instant_lis,replica_origin
/// Timesteps are written 1-based; replica_origin is empty when there is none.
void write_stream_csv(std::ostream& os, const StreamReport& report);

}  // namespace rqmoe
