// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "rqmoe/expert_analysis.hpp"
#include "rqmoe/moe_model.hpp"
#include "rqmoe/quantization.hpp"

namespace rqmoe {

struct LayerPlan {
  std::size_t replicate_id = 0;  // heavy hitter
  std::size_t quantize_id = 0;   // least important expert
  PrecisionScheme replica_scheme = PrecisionScheme::Half16;
  PrecisionScheme quant_scheme = PrecisionScheme::Half16;
  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

struct RQPlan {
  std::vector<LayerPlan> layers;
  friend bool operator==(const RQPlan&, const RQPlan&) = default;
};

struct SchemePair {
  PrecisionScheme replica = PrecisionScheme::Half16;
  PrecisionScheme quant = PrecisionScheme::Half16;
};

/// Plan from already computed analyses (one entry per layer in each).
RQPlan make_plan(const HeavyHitterList& heavy, const ImportanceReport& importance,
                 SchemePair schemes);

/// Heavy hitters and importance scores from one calibration set.
RQPlan build_plan(const MoeModel& model, const Matrix& calib, double sparsity,
                  SchemePair schemes);

/// Highest-precision scheme among a layer's original instances.
PrecisionScheme base_scheme(const MoeLayer& layer);

/// Appends a replica of `origin` (built from its current weights) stored at `scheme`.
MoeLayer with_replica(const MoeLayer& layer, std::size_t origin, PrecisionScheme scheme);

/// Re-stores `origin`'s original instance at `scheme`.
MoeLayer with_quantized(const MoeLayer& layer, std::size_t origin, PrecisionScheme scheme);

/// Per layer: replicate first (from the pre-quantization weights), then
/// quantize. Routers are untouched. Throws StateError if the model already
/// has replicas, ArgumentError for out-of-range ids or schemes that are not
/// strictly below the layer's base precision.
MoeModel apply_plan(const MoeModel& model, const RQPlan& plan);

struct LayerMemory {
  std::size_t bytes_before = 0;
  std::size_t bytes_after = 0;
  std::size_t scale_overhead_bytes = 0;
};

struct MemoryReport {
  std::vector<LayerMemory> layers;
  LayerMemory total;
  bool over_budget() const noexcept { return total.bytes_after > total.bytes_before; }
};

/// Expert storage before and after (routers excluded). Scale overhead counts
/// 4 bytes per row for every Int8Sym matrix the transform introduced.
MemoryReport memory_report(const MoeModel& before, const MoeModel& after);

}  // namespace rqmoe
