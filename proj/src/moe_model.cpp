// SPDX-License-Identifier: Apache-2.0
#include "rqmoe/moe_model.hpp"

#include <algorithm>

#include "rqmoe/errors.hpp"
#include "rqmoe/routing_metrics.hpp"

namespace rqmoe {

MoeLayer::MoeLayer(Router router, std::size_t top_k, std::vector<ExpertInstance> instances)
    : router_(std::move(router)), top_k_(top_k), instances_(std::move(instances)) {
  const std::size_t m = router_.expert_count();
  if (m == 0) throw ArgumentError("layer: router has no experts");
  if (router_.bias.size() != m) {
    throw ShapeError("layer: router bias length " + std::to_string(router_.bias.size()) +
                     " vs " + std::to_string(m) + " experts");
  }
  require_finite(router_.bias, "router bias");
  if (top_k_ == 0 || top_k_ >= m) {
    throw ArgumentError("layer: need 0 < k < m, got k=" + std::to_string(top_k_) +
                        " m=" + std::to_string(m));
  }
  if (instances_.empty()) throw ArgumentError("layer: no expert instances");

  original_of_.assign(m, npos);
  replica_of_.assign(m, npos);
  const std::size_t rows = instances_.front().weights.rows();
  for (std::size_t i = 0; i < instances_.size(); ++i) {
    const auto& inst = instances_[i];
    if (inst.origin_id >= m) {
      throw ArgumentError("layer: instance origin " + std::to_string(inst.origin_id) +
                          " outside [0, " + std::to_string(m) + ")");
    }
    if (inst.weights.rows() != rows || inst.weights.cols() != d_in()) {
      throw ShapeError("layer: expert " + std::to_string(inst.weights.rows()) + "x" +
                       std::to_string(inst.weights.cols()) + " vs expected " +
                       std::to_string(rows) + "x" + std::to_string(d_in()));
    }
    auto& slot = inst.is_replica ? replica_of_[inst.origin_id] : original_of_[inst.origin_id];
    if (slot != npos) {
      throw ArgumentError(std::string("layer: duplicate ") +
                          (inst.is_replica ? "replica" : "original") + " for origin " +
                          std::to_string(inst.origin_id));
    }
    slot = i;
  }
  for (std::size_t e = 0; e < m; ++e) {
    if (original_of_[e] == npos) {
      throw ArgumentError("layer: origin " + std::to_string(e) + " has no original instance");
    }
  }
}

std::size_t MoeLayer::original_index(std::size_t origin) const {
  if (origin >= original_of_.size()) {
    throw ArgumentError("unknown origin " + std::to_string(origin));
  }
  return original_of_[origin];
}

std::size_t MoeLayer::replica_index(std::size_t origin) const {
  if (origin >= replica_of_.size()) {
    throw ArgumentError("unknown origin " + std::to_string(origin));
  }
  return replica_of_[origin];
}

MoeModel::MoeModel(std::vector<MoeLayer> layers, ModelMetadata metadata)
    : layers_(std::move(layers)), metadata_(std::move(metadata)) {
  if (layers_.empty()) throw ArgumentError("model: needs at least one layer");
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    if (layers_[i].d_out() != layers_[i + 1].d_in()) {
      throw ShapeError("model: layer " + std::to_string(i) + " outputs " +
                       std::to_string(layers_[i].d_out()) + " features but layer " +
                       std::to_string(i + 1) + " expects " +
                       std::to_string(layers_[i + 1].d_in()));
    }
  }
}

RouteResult route_token(const MoeLayer& layer, std::span<const double> x) {
  std::vector<double> logits = matvec(layer.router().weights, x);
  for (std::size_t j = 0; j < logits.size(); ++j) logits[j] += layer.router().bias[j];
  const std::vector<double> probs = softmax_row(logits);

  RouteResult out;
  out.selected = topk_indices(probs, layer.top_k());
  double total = 0.0;
  for (std::size_t e : out.selected) total += probs[e];
  out.gates.reserve(out.selected.size());
  for (std::size_t e : out.selected) out.gates.push_back(probs[e] / total);
  return out;
}

std::size_t dispatch_instance(const MoeLayer& layer, DispatchCounters& counters,
                              std::size_t origin) {
  const std::size_t original = layer.original_index(origin);
  const std::size_t replica = layer.replica_index(origin);
  if (origin >= counters.counts_.size()) {
    throw ArgumentError("dispatch counters sized for a different layer");
  }
  const std::uint64_t turn = counters.counts_[origin]++;
  if (replica == MoeLayer::npos) return original;
  return turn % 2 == 0 ? original : replica;
}

std::vector<Matrix> dequantized_instances(const MoeLayer& layer) {
  std::vector<Matrix> out;
  out.reserve(layer.instance_count());
  for (const auto& inst : layer.instances()) out.push_back(dequantize(inst.weights));
  return out;
}

namespace {

std::vector<double> run_layer(const MoeLayer& layer, std::span<const Matrix> weights,
                              std::span<const double> x, DispatchCounters& counters,
                              LayerTrace* trace, LayerObserver* observer,
                              std::size_t layer_index) {
  if (x.size() != layer.d_in()) {
    throw ShapeError("layer " + std::to_string(layer_index) + ": input of length " +
                     std::to_string(x.size()) + " vs C_in " + std::to_string(layer.d_in()));
  }
  const RouteResult route = route_token(layer, x);
  std::vector<std::size_t> chosen;
  chosen.reserve(route.selected.size());
  std::vector<double> out(layer.d_out(), 0.0);
  for (std::size_t s = 0; s < route.selected.size(); ++s) {
    const std::size_t inst = dispatch_instance(layer, counters, route.selected[s]);
    chosen.push_back(inst);
    const std::vector<double> y = matvec(weights[inst], x);
    for (std::size_t r = 0; r < out.size(); ++r) out[r] += route.gates[s] * y[r];
  }
  if (trace != nullptr) {
    trace->record_token();
    for (std::size_t inst : chosen) trace->record_dispatch(inst);
  }
  if (observer != nullptr) observer->on_route(layer_index, x, route, chosen);
  return out;
}

}  // namespace

std::vector<double> forward_layer(const MoeLayer& layer, std::span<const double> x,
                                  DispatchCounters& counters, LayerTrace* trace) {
  const std::vector<Matrix> weights = dequantized_instances(layer);
  return run_layer(layer, weights, x, counters, trace, nullptr, 0);
}

Matrix forward_model(const MoeModel& model, const Matrix& tokens, RoutingTrace* trace,
                     LayerObserver* observer) {
  if (tokens.cols() != model.d_in() && tokens.rows() > 0) {
    throw ShapeError("forward_model: tokens " + tokens.shape_string() + " vs model input " +
                     std::to_string(model.d_in()));
  }
  if (trace != nullptr) {
    const RoutingTrace fresh = RoutingTrace::for_model(model);
    if (trace->layers.empty()) {
      *trace = fresh;
    } else if (!same_topology(*trace, fresh)) {
      throw ArgumentError("forward_model: trace topology does not match the model");
    }
  }

  std::vector<std::vector<Matrix>> weights;
  std::vector<DispatchCounters> counters;
  weights.reserve(model.layer_count());
  counters.reserve(model.layer_count());
  for (const auto& layer : model.layers()) {
    weights.push_back(dequantized_instances(layer));
    counters.emplace_back(layer.base_expert_count());
  }

  Matrix out(tokens.rows(), model.d_out());
  for (std::size_t t = 0; t < tokens.rows(); ++t) {
    std::vector<double> x(tokens.row(t).begin(), tokens.row(t).end());
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
      LayerTrace* lt = trace != nullptr ? &trace->layers[l] : nullptr;
      x = run_layer(model.layer(l), weights[l], x, counters[l], lt, observer, l);
    }
    std::copy(x.begin(), x.end(), out.row(t).begin());
  }
  return out;
}

}  // namespace rqmoe
