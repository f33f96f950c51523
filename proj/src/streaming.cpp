// SPDX-License-Identifier: Apache-2.0
#include "rqmoe/streaming.hpp"

#include <algorithm>
#include <ostream>

#include "rqmoe/errors.hpp"
#include "rqmoe/format.hpp"
#include "rqmoe/rq_transform.hpp"

namespace rqmoe {

std::string_view to_string(StreamStrategy strategy) {
  return strategy == StreamStrategy::Cumulative ? "cumulative" : "window1";
}

std::optional<StreamStrategy> parse_strategy(std::string_view text) {
  if (text == "cumulative") return StreamStrategy::Cumulative;
  if (text == "window1") return StreamStrategy::Window1;
  return std::nullopt;
}

std::vector<Matrix> split_segments(const Matrix& tokens, std::size_t timesteps) {
  if (timesteps < 2) throw ArgumentError("stream needs at least 2 timesteps");
  if (tokens.rows() < timesteps) {
    throw InsufficientStreamError("stream has " + std::to_string(tokens.rows()) +
                                  " tokens for " + std::to_string(timesteps) + " timesteps");
  }
  const std::size_t base = tokens.rows() / timesteps;
  std::vector<Matrix> out;
  std::size_t start = 0;
  for (std::size_t t = 0; t < timesteps; ++t) {
    const std::size_t len = t + 1 == timesteps ? tokens.rows() - start : base;
    std::vector<double> values;
    values.reserve(len * tokens.cols());
    for (std::size_t r = start; r < start + len; ++r) {
      values.insert(values.end(), tokens.row(r).begin(), tokens.row(r).end());
    }
    out.emplace_back(len, tokens.cols(), std::move(values));
    start += len;
  }
  return out;
}

std::vector<Matrix> build_adversarial_stream(const MoeModel& model, const Matrix& tokens,
                                             std::size_t timesteps) {
  if (tokens.rows() == 0) throw ArgumentError("build_adversarial_stream: no tokens");
  if (timesteps < 2) throw ArgumentError("stream needs at least 2 timesteps");
  RoutingTrace trace;
  forward_model(model, tokens, &trace);
  const std::size_t heavy = heaviest_origin(trace.layers.front());

  const MoeLayer& first = model.layer(0);
  std::vector<double> kept;
  std::size_t rows = 0;
  for (std::size_t r = 0; r < tokens.rows(); ++r) {
    if (route_token(first, tokens.row(r)).selected.front() == heavy) {
      kept.insert(kept.end(), tokens.row(r).begin(), tokens.row(r).end());
      ++rows;
    }
  }
  if (rows < timesteps) {
    throw InsufficientStreamError("only " + std::to_string(rows) +
                                  " tokens route to heavy hitter " + std::to_string(heavy) +
                                  "; need at least " + std::to_string(timesteps));
  }
  return split_segments(Matrix(rows, tokens.cols(), std::move(kept)), timesteps);
}

namespace {

// Cumulative instance counts for one layer. Counts are keyed by (origin,
// role); when the replica moves to another origin, the old replica's counts
// fold back into that origin's original instance.
class CumulativeCounts {
 public:
  CumulativeCounts(std::size_t base_experts, std::size_t top_k)
      : original_(base_experts, 0), top_k_(top_k) {}

  void add(const LayerTrace& segment, std::optional<std::size_t> replica_origin) {
    if (replica_origin_ && replica_origin_ != replica_origin) {
      original_[*replica_origin_] += replica_;
      replica_ = 0;
    }
    replica_origin_ = replica_origin;
    for (std::size_t i = 0; i < segment.instance_count(); ++i) {
      if (segment.instance_is_replica[i]) {
        replica_ += segment.instance_counts[i];
      } else {
        original_[segment.instance_origin[i]] += segment.instance_counts[i];
      }
    }
    tokens_ += segment.tokens;
  }

  double lis() const {
    if (tokens_ == 0) throw EmptyTraceError("cumulative lis: no tokens");
    std::uint64_t busiest = *std::max_element(original_.begin(), original_.end());
    std::size_t units = original_.size();
    if (replica_origin_) {
      busiest = std::max(busiest, replica_);
      ++units;
    }
    return static_cast<double>(units) * static_cast<double>(busiest) /
           (static_cast<double>(tokens_) * static_cast<double>(top_k_));
  }

 private:
  std::vector<std::uint64_t> original_;
  std::uint64_t replica_ = 0;
  std::optional<std::size_t> replica_origin_;
  std::uint64_t tokens_ = 0;
  std::size_t top_k_;
};

std::vector<CumulativeCounts> make_counters(const MoeModel& model) {
  std::vector<CumulativeCounts> out;
  for (const auto& layer : model.layers()) {
    out.emplace_back(layer.base_expert_count(), layer.top_k());
  }
  return out;
}

}  // namespace

StreamReport run_stream(const MoeModel& model, const std::vector<Matrix>& stream,
                        const StreamConfig& cfg) {
  const std::size_t p = model.layer_count();
  if (cfg.timesteps < 2) throw ArgumentError("stream needs at least 2 timesteps");
  if (stream.size() != cfg.timesteps) {
    throw ArgumentError("stream has " + std::to_string(stream.size()) + " segments, config " +
                        std::to_string(cfg.timesteps));
  }
  for (std::size_t l = 0; l < p; ++l) {
    if (model.layer(l).has_replicas()) throw StateError("run_stream: model already has replicas");
  }
  if (cfg.enable_quantization && cfg.quantize_ids.size() != p) {
    throw ArgumentError("run_stream: need one quantize id per layer");
  }
  if (cfg.warm_start && cfg.warm_start->experts.size() != p) {
    throw ArgumentError("run_stream: warm start needs one expert per layer");
  }

  // The quantize-only model is fixed for the whole stream.
  MoeModel quantized = model;
  if (cfg.enable_quantization) {
    std::vector<MoeLayer> layers;
    for (std::size_t l = 0; l < p; ++l) {
      const MoeLayer& layer = model.layer(l);
      if (cfg.quantize_ids[l] >= layer.base_expert_count()) {
        throw ArgumentError("run_stream: quantize id out of range in layer " + std::to_string(l));
      }
      if (!lower_precision(cfg.quant_scheme, base_scheme(layer))) {
        throw ArgumentError("run_stream: quant scheme must be below the base precision");
      }
      layers.push_back(with_quantized(layer, cfg.quantize_ids[l], cfg.quant_scheme));
    }
    quantized = MoeModel(std::move(layers), model.metadata());
  }
  if (cfg.enable_replication) {
    for (std::size_t l = 0; l < p; ++l) {
      if (!lower_precision(cfg.replica_scheme, base_scheme(model.layer(l)))) {
        throw ArgumentError("run_stream: replica scheme must be below the base precision");
      }
    }
  }

  StreamReport report;
  report.strategy = cfg.strategy;
  auto raw_cum = make_counters(model);
  auto rq_cum = make_counters(model);
  std::vector<std::vector<std::uint64_t>> history(p);  // origin counts driving choices
  for (std::size_t l = 0; l < p; ++l) history[l].assign(model.layer(l).base_expert_count(), 0);

  for (std::size_t t = 0; t < cfg.timesteps; ++t) {
    const Matrix& segment = stream[t];
    if (segment.rows() == 0) {
      throw ArgumentError("run_stream: segment " + std::to_string(t + 1) + " is empty");
    }

    std::vector<std::optional<std::size_t>> choice(p);
    if (cfg.enable_replication) {
      for (std::size_t l = 0; l < p; ++l) {
        if (t == 0) {
          if (cfg.warm_start) choice[l] = cfg.warm_start->experts[l];
        } else {
          const auto& h = history[l];
          choice[l] = static_cast<std::size_t>(std::max_element(h.begin(), h.end()) - h.begin());
        }
      }
    }

    MoeModel rq_model = quantized;
    if (cfg.enable_replication) {
      std::vector<MoeLayer> layers;
      for (std::size_t l = 0; l < p; ++l) {
        if (!choice[l]) {
          layers.push_back(quantized.layer(l));
          continue;
        }
        // The replica comes from the original weights even when the same
        // expert is also the quantized one.
        const MoeLayer& source = model.layer(l);
        const auto& orig = source.instances()[source.original_index(*choice[l])];
        std::vector<ExpertInstance> instances = quantized.layer(l).instances();
        instances.push_back(
            {*choice[l], quantize(dequantize(orig.weights), cfg.replica_scheme), true});
        layers.emplace_back(source.router(), source.top_k(), std::move(instances));
      }
      rq_model = MoeModel(std::move(layers), model.metadata());
    }

    RoutingTrace raw_trace;
    forward_model(model, segment, &raw_trace);
    RoutingTrace rq_trace;
    forward_model(rq_model, segment, &rq_trace);

    std::vector<StreamPoint> raw_points, rq_points;
    for (std::size_t l = 0; l < p; ++l) {
      raw_cum[l].add(raw_trace.layers[l], std::nullopt);
      rq_cum[l].add(rq_trace.layers[l], choice[l]);
      raw_points.push_back({raw_cum[l].lis(), lis(raw_trace.layers[l], Granularity::Instance)});
      rq_points.push_back({rq_cum[l].lis(), lis(rq_trace.layers[l], Granularity::Instance)});

      const auto& seg_counts = rq_trace.layers[l].origin_counts;
      if (cfg.strategy == StreamStrategy::Window1) {
        history[l] = seg_counts;
      } else {
        for (std::size_t j = 0; j < seg_counts.size(); ++j) history[l][j] += seg_counts[j];
      }
    }
    report.raw.push_back(std::move(raw_points));
    report.rq.push_back(std::move(rq_points));
    report.replica_choice.push_back(std::move(choice));
    report.raw_traces.push_back(std::move(raw_trace));
    report.rq_traces.push_back(std::move(rq_trace));
  }
  return report;
}

void write_stream_csv(std::ostream& os, const StreamReport& report) {
  os << "timestep,layer,variant,strategy,cumulative_lis,instant_lis,replica_origin\n";
  const std::string_view strategy = to_string(report.strategy);
  for (std::size_t t = 0; t < report.timesteps(); ++t) {
    for (std::size_t l = 0; l < report.raw[t].size(); ++l) {
      const auto& raw = report.raw[t][l];
      const auto& rq = report.rq[t][l];
      os << t + 1 << ',' << l << ",raw," << strategy << ',' << format_double(raw.cumulative_lis)
         << ',' << format_double(raw.instant_lis) << ",\n";
      os << t + 1 << ',' << l << ",rq," << strategy << ',' << format_double(rq.cumulative_lis)
         << ',' << format_double(rq.instant_lis) << ',';
      if (report.replica_choice[t][l]) os << *report.replica_choice[t][l];
      os << '\n';
    }
  }
}

}  // namespace rqmoe
