// SPDX-License-Identifier: Apache-2.0
#include "rqmoe/rq_transform.hpp"

#include <algorithm>

#include "rqmoe/errors.hpp"
#include "rqmoe/expert_analysis.hpp"

namespace rqmoe {

RQPlan make_plan(const HeavyHitterList& heavy, const ImportanceReport& importance,
                 SchemePair schemes) {
  if (heavy.experts.size() != importance.chosen.size()) {
    throw ArgumentError("make_plan: analyses cover different layer counts");
  }
  RQPlan plan;
  for (std::size_t l = 0; l < heavy.experts.size(); ++l) {
    plan.layers.push_back(
        {heavy.experts[l], importance.chosen[l], schemes.replica, schemes.quant});
  }
  return plan;
}

RQPlan build_plan(const MoeModel& model, const Matrix& calib, double sparsity,
                  SchemePair schemes) {
  return make_plan(find_heavy_hitters(model, calib),
                   wanda_expert_scores(model, calib, sparsity), schemes);
}

PrecisionScheme base_scheme(const MoeLayer& layer) {
  PrecisionScheme best = PrecisionScheme::Int8Sym;
  for (const auto& inst : layer.instances()) {
    if (!inst.is_replica && precision_rank(inst.weights.scheme()) > precision_rank(best)) {
      best = inst.weights.scheme();
    }
  }
  return best;
}

MoeLayer with_replica(const MoeLayer& layer, std::size_t origin, PrecisionScheme scheme) {
  if (layer.replica_index(origin) != MoeLayer::npos) {
    throw StateError("expert " + std::to_string(origin) + " already has a replica");
  }
  const auto& source = layer.instances()[layer.original_index(origin)];
  std::vector<ExpertInstance> instances = layer.instances();
  instances.push_back({origin, quantize(dequantize(source.weights), scheme), true});
  return MoeLayer(layer.router(), layer.top_k(), std::move(instances));
}

MoeLayer with_quantized(const MoeLayer& layer, std::size_t origin, PrecisionScheme scheme) {
  std::vector<ExpertInstance> instances = layer.instances();
  auto& target = instances[layer.original_index(origin)];
  target.weights = quantize(dequantize(target.weights), scheme);
  return MoeLayer(layer.router(), layer.top_k(), std::move(instances));
}

MoeModel apply_plan(const MoeModel& model, const RQPlan& plan) {
  if (plan.layers.size() != model.layer_count()) {
    throw ArgumentError("apply_plan: plan has " + std::to_string(plan.layers.size()) +
                        " layers, model has " + std::to_string(model.layer_count()));
  }
  std::vector<MoeLayer> layers;
  layers.reserve(model.layer_count());
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const MoeLayer& layer = model.layer(l);
    const LayerPlan& lp = plan.layers[l];
    if (layer.has_replicas()) {
      throw StateError("apply_plan: layer " + std::to_string(l) + " already has replicas");
    }
    const std::size_t m = layer.base_expert_count();
    if (lp.replicate_id >= m || lp.quantize_id >= m) {
      throw ArgumentError("apply_plan: layer " + std::to_string(l) + " ids (" +
                          std::to_string(lp.replicate_id) + ", " +
                          std::to_string(lp.quantize_id) + ") outside [0, " +
                          std::to_string(m) + ")");
    }
    const PrecisionScheme base = base_scheme(layer);
    if (!lower_precision(lp.replica_scheme, base) || !lower_precision(lp.quant_scheme, base)) {
      throw ArgumentError("apply_plan: layer " + std::to_string(l) + " schemes must be below " +
                          std::string(to_string(base)));
    }
    layers.push_back(with_quantized(with_replica(layer, lp.replicate_id, lp.replica_scheme),
                                    lp.quantize_id, lp.quant_scheme));
  }
  return MoeModel(std::move(layers), model.metadata());
}

namespace {

struct LayerBytes {
  std::size_t bytes = 0;
  std::size_t int8_matrices = 0;
  std::size_t rows = 0;
};

LayerBytes measure(const MoeLayer& layer) {
  LayerBytes out;
  out.rows = layer.d_out();
  for (const auto& inst : layer.instances()) {
    out.bytes += storage_bytes(inst.weights);
    if (inst.weights.scheme() == PrecisionScheme::Int8Sym) ++out.int8_matrices;
  }
  return out;
}

}  // namespace

MemoryReport memory_report(const MoeModel& before, const MoeModel& after) {
  if (before.layer_count() != after.layer_count()) {
    throw ArgumentError("memory_report: layer counts differ");
  }
  MemoryReport report;
  for (std::size_t l = 0; l < before.layer_count(); ++l) {
    const LayerBytes b = measure(before.layer(l));
    const LayerBytes a = measure(after.layer(l));
    LayerMemory lm;
    lm.bytes_before = b.bytes;
    lm.bytes_after = a.bytes;
    const std::size_t introduced = a.int8_matrices > b.int8_matrices
                                       ? a.int8_matrices - b.int8_matrices
                                       : 0;
    lm.scale_overhead_bytes = 4 * a.rows * introduced;
    report.total.bytes_before += lm.bytes_before;
    report.total.bytes_after += lm.bytes_after;
    report.total.scale_overhead_bytes += lm.scale_overhead_bytes;
    report.layers.push_back(lm);
  }
  return report;
}

}  // namespace rqmoe
