// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rqmoe/numerics.hpp"
#include "rqmoe/quantization.hpp"

namespace rqmoe {

struct LayerTrace;
struct RoutingTrace;

/// One compute unit in a layer: a dense C_out x C_in expert matrix.
struct ExpertInstance {
  std::size_t origin_id = 0;
  QuantizedMatrix weights;
  bool is_replica = false;

  friend bool operator==(const ExpertInstance&, const ExpertInstance&) = default;
};

/// Softmax top-k router over base experts. `bias` adds a constant to each
/// expert's logit; it is the skew mechanism of the workload generator.
struct Router {
  Matrix weights;            // m x C_in
  std::vector<double> bias;  // m

  std::size_t expert_count() const noexcept { return weights.rows(); }
  friend bool operator==(const Router&, const Router&) = default;
};

class MoeLayer {
 public:
  MoeLayer() = default;
  /// Validates: k < m, router rows == m, every origin 0..m-1 has exactly one
  /// non-replica instance, at most one replica per origin, and all instance
  /// shapes equal.
  MoeLayer(Router router, std::size_t top_k, std::vector<ExpertInstance> instances);

  const Router& router() const noexcept { return router_; }
  std::size_t base_expert_count() const noexcept { return router_.expert_count(); }
  std::size_t top_k() const noexcept { return top_k_; }
  std::size_t d_in() const noexcept { return router_.weights.cols(); }
  std::size_t d_out() const noexcept { return instances_.front().weights.rows(); }

  const std::vector<ExpertInstance>& instances() const noexcept { return instances_; }
  std::size_t instance_count() const noexcept { return instances_.size(); }
  bool has_replicas() const noexcept { return instances_.size() > base_expert_count(); }

  /// Index of the non-replica instance for `origin`.
  std::size_t original_index(std::size_t origin) const;
  /// Index of the replica for `origin`, or npos if none.
  std::size_t replica_index(std::size_t origin) const;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  friend bool operator==(const MoeLayer&, const MoeLayer&) = default;

 private:
  Router router_;
  std::size_t top_k_ = 1;
  std::vector<ExpertInstance> instances_;
  std::vector<std::size_t> original_of_;  // origin -> instance index
  std::vector<std::size_t> replica_of_;   // origin -> instance index or npos
};

struct ModelMetadata {
  std::string name;
  std::uint64_t seed = 0;
  friend bool operator==(const ModelMetadata&, const ModelMetadata&) = default;
};

class MoeModel {
 public:
  MoeModel() = default;
  /// Validates p >= 1 and that consecutive layers chain (C_out == next C_in).
  MoeModel(std::vector<MoeLayer> layers, ModelMetadata metadata);

  const std::vector<MoeLayer>& layers() const noexcept { return layers_; }
  const MoeLayer& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  std::size_t d_in() const noexcept { return layers_.front().d_in(); }
  std::size_t d_out() const noexcept { return layers_.back().d_out(); }
  const ModelMetadata& metadata() const noexcept { return metadata_; }

  friend bool operator==(const MoeModel&, const MoeModel&) = default;

 private:
  std::vector<MoeLayer> layers_;
  ModelMetadata metadata_;
};

/// Per-origin round-robin state for one layer. Kept apart from the layer so a
/// model can be shared read-only between concurrent forward passes.
class DispatchCounters {
 public:
  explicit DispatchCounters(std::size_t base_experts) : counts_(base_experts, 0) {}
  std::uint64_t count(std::size_t origin) const { return counts_.at(origin); }

 private:
  friend std::size_t dispatch_instance(const MoeLayer&, DispatchCounters&, std::size_t);
  std::vector<std::uint64_t> counts_;
};

struct RouteResult {
  std::vector<std::size_t> selected;  // base-expert ids, descending probability
  std::vector<double> gates;          // renormalized over `selected`
};

RouteResult route_token(const MoeLayer& layer, std::span<const double> x);

/// Instance that serves the next token for `origin`: the original if there
/// is no replica, otherwise original and replica alternate, original first.
std::size_t dispatch_instance(const MoeLayer& layer, DispatchCounters& counters,
                              std::size_t origin);

/// Dequantized weights of every instance, indexed like layer.instances().
std::vector<Matrix> dequantized_instances(const MoeLayer& layer);

/// Called once per layer per token with the layer input and the routing decision.
struct LayerObserver {
  virtual ~LayerObserver() = default;
  virtual void on_route(std::size_t layer, std::span<const double> input,
                        const RouteResult& route, std::span<const std::size_t> instances) = 0;
};

std::vector<double> forward_layer(const MoeLayer& layer, std::span<const double> x,
                                  DispatchCounters& counters, LayerTrace* trace = nullptr);

/// Runs every token (row) through all layers in row order. Dispatch counters
/// start fresh on every call.
Matrix forward_model(const MoeModel& model, const Matrix& tokens,
                     RoutingTrace* trace = nullptr, LayerObserver* observer = nullptr);

}  // namespace rqmoe
