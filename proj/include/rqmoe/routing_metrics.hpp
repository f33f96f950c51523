// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace rqmoe {

class MoeModel;
class MoeLayer;

/// Token counts for one layer, at instance and at base-expert (origin) level.
struct LayerTrace {
  std::size_t base_experts = 0;  // m
  std::size_t top_k = 1;         // k
  std::uint64_t tokens = 0;      // n
  std::vector<std::size_t> instance_origin;
  std::vector<bool> instance_is_replica;
  std::vector<std::uint64_t> instance_counts;
  std::vector<std::uint64_t> origin_counts;

  /// Zero-count trace with the layer's instance topology.
  static LayerTrace for_layer(const MoeLayer& layer);

  std::size_t instance_count() const noexcept { return instance_counts.size(); }
  void record_token() noexcept { ++tokens; }
  void record_dispatch(std::size_t instance) {
    ++instance_counts.at(instance);
    ++origin_counts.at(instance_origin[instance]);
  }

  friend bool operator==(const LayerTrace&, const LayerTrace&) = default;
};

struct RoutingTrace {
  std::vector<LayerTrace> layers;

  static RoutingTrace for_model(const MoeModel& model);
  friend bool operator==(const RoutingTrace&, const RoutingTrace&) = default;
};

enum class Granularity { Instance, Origin };

/// Load imbalance score m * max_j n_j / (n * k). With Origin granularity m is
/// the base expert count; with Instance granularity it is the instance count.
double lis(const LayerTrace& layer, Granularity granularity);
double lis(const RoutingTrace& trace, std::size_t layer, Granularity granularity);

/// Same layer count, base/instance layout, and top-k in every layer.
bool same_topology(const RoutingTrace& a, const RoutingTrace& b);

/// Elementwise sum of two traces with identical topology.
RoutingTrace merge_traces(const RoutingTrace& a, const RoutingTrace& b);

/// Base expert with the largest origin count; lowest index wins ties.
std::size_t heaviest_origin(const LayerTrace& layer);

struct LayerGaps {
  std::vector<std::uint64_t> sorted_counts;  // descending, stable
  std::vector<std::uint64_t> gaps;           // sorted[r] - sorted[r + 1]
  std::vector<double> normalized;            // gaps / (n * k / m_i)
};

struct GapMatrix {
  std::vector<LayerGaps> layers;
};

GapMatrix gap_matrix(const RoutingTrace& trace);

// Trace CSV: header `layer,instance,origin,is_replica,count`, then one
// `#meta n=<tokens> k=<top_k>` row, then one data row per instance. Other
// lines starting with '#' are comments.
void write_trace_csv(std::ostream& os, const RoutingTrace& trace);
RoutingTrace read_trace_csv(std::istream& is, const std::string& path);

void write_gap_csv(std::ostream& os, const GapMatrix& gaps);

}  // namespace rqmoe
