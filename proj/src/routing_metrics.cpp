// SPDX-License-Identifier: Apache-2.0
#include "rqmoe/routing_metrics.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "rqmoe/errors.hpp"
#include "rqmoe/format.hpp"
#include "rqmoe/moe_model.hpp"

namespace rqmoe {

LayerTrace LayerTrace::for_layer(const MoeLayer& layer) {
  LayerTrace t;
  t.base_experts = layer.base_expert_count();
  t.top_k = layer.top_k();
  for (const auto& inst : layer.instances()) {
    t.instance_origin.push_back(inst.origin_id);
    t.instance_is_replica.push_back(inst.is_replica);
  }
  t.instance_counts.assign(layer.instance_count(), 0);
  t.origin_counts.assign(layer.base_expert_count(), 0);
  return t;
}

RoutingTrace RoutingTrace::for_model(const MoeModel& model) {
  RoutingTrace t;
  for (const auto& layer : model.layers()) t.layers.push_back(LayerTrace::for_layer(layer));
  return t;
}

double lis(const LayerTrace& layer, Granularity granularity) {
  if (layer.tokens == 0) throw EmptyTraceError("lis: layer has observed no tokens");
  const auto& counts =
      granularity == Granularity::Origin ? layer.origin_counts : layer.instance_counts;
  const double units = static_cast<double>(counts.size());
  const double busiest = static_cast<double>(*std::max_element(counts.begin(), counts.end()));
  return units * busiest /
         (static_cast<double>(layer.tokens) * static_cast<double>(layer.top_k));
}

double lis(const RoutingTrace& trace, std::size_t layer, Granularity granularity) {
  if (layer >= trace.layers.size()) {
    throw ArgumentError("lis: layer " + std::to_string(layer) + " out of range");
  }
  return lis(trace.layers[layer], granularity);
}

bool same_topology(const RoutingTrace& a, const RoutingTrace& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto& x = a.layers[l];
    const auto& y = b.layers[l];
    if (x.base_experts != y.base_experts || x.top_k != y.top_k ||
        x.instance_origin != y.instance_origin ||
        x.instance_is_replica != y.instance_is_replica) {
      return false;
    }
  }
  return true;
}

RoutingTrace merge_traces(const RoutingTrace& a, const RoutingTrace& b) {
  if (!same_topology(a, b)) throw ArgumentError("merge_traces: topology mismatch");
  RoutingTrace out = a;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto& dst = out.layers[l];
    const auto& src = b.layers[l];
    dst.tokens += src.tokens;
    for (std::size_t i = 0; i < dst.instance_counts.size(); ++i) {
      dst.instance_counts[i] += src.instance_counts[i];
    }
    for (std::size_t j = 0; j < dst.origin_counts.size(); ++j) {
      dst.origin_counts[j] += src.origin_counts[j];
    }
  }
  return out;
}

std::size_t heaviest_origin(const LayerTrace& layer) {
  const auto& c = layer.origin_counts;
  return static_cast<std::size_t>(std::max_element(c.begin(), c.end()) - c.begin());
}

GapMatrix gap_matrix(const RoutingTrace& trace) {
  GapMatrix out;
  for (std::size_t l = 0; l < trace.layers.size(); ++l) {
    const auto& layer = trace.layers[l];
    if (layer.tokens == 0) {
      throw EmptyTraceError("gap_matrix: layer " + std::to_string(l) + " has no tokens");
    }
    LayerGaps g;
    g.sorted_counts = layer.instance_counts;
    std::stable_sort(g.sorted_counts.begin(), g.sorted_counts.end(), std::greater<>());
    const double ideal = static_cast<double>(layer.tokens) * static_cast<double>(layer.top_k) /
                         static_cast<double>(layer.instance_count());
    for (std::size_t r = 0; r + 1 < g.sorted_counts.size(); ++r) {
      const std::uint64_t gap = g.sorted_counts[r] - g.sorted_counts[r + 1];
      g.gaps.push_back(gap);
      g.normalized.push_back(static_cast<double>(gap) / ideal);
    }
    out.layers.push_back(std::move(g));
  }
  return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

template <class T>
T parse_uint(const std::string& text, const std::string& path, std::size_t line,
             const char* what) {
  T value{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ParseError(path, line, std::string("bad ") + what + " '" + text + "'");
  }
  return value;
}

}  // namespace

void write_trace_csv(std::ostream& os, const RoutingTrace& trace) {
  os << "layer,instance,origin,is_replica,count\n";
  const std::uint64_t n = trace.layers.empty() ? 0 : trace.layers.front().tokens;
  const std::size_t k = trace.layers.empty() ? 1 : trace.layers.front().top_k;
  os << "#meta n=" << n << " k=" << k << "\n";
  for (std::size_t l = 0; l < trace.layers.size(); ++l) {
    const auto& layer = trace.layers[l];
    for (std::size_t i = 0; i < layer.instance_count(); ++i) {
      os << l << ',' << i << ',' << layer.instance_origin[i] << ','
         << (layer.instance_is_replica[i] ? 1 : 0) << ',' << layer.instance_counts[i] << '\n';
    }
  }
}

RoutingTrace read_trace_csv(std::istream& is, const std::string& path) {
  struct Row {
    std::size_t instance, origin;
    bool replica;
    std::uint64_t count;
    std::size_t line;
  };
  std::map<std::size_t, std::vector<Row>> rows;
  bool header_seen = false;
  bool meta_seen = false;
  std::uint64_t n = 0;
  std::size_t k = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("#meta", 0) == 0) {
      std::istringstream ss(line.substr(5));
      std::string kv;
      while (ss >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ParseError(path, lineno, "bad meta field '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        if (key == "n") {
          n = parse_uint<std::uint64_t>(val, path, lineno, "n");
        } else if (key == "k") {
          k = parse_uint<std::size_t>(val, path, lineno, "k");
        } else {
          throw ParseError(path, lineno, "unknown meta field '" + key + "'");
        }
      }
      meta_seen = true;
      continue;
    }
    if (line.front() == '#') continue;
    if (!header_seen) {
      if (line != "layer,instance,origin,is_replica,count") {
        throw ParseError(path, lineno, "expected header layer,instance,origin,is_replica,count");
      }
      header_seen = true;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 5) throw ParseError(path, lineno, "expected 5 fields");
    const auto layer = parse_uint<std::size_t>(f[0], path, lineno, "layer");
    Row r{parse_uint<std::size_t>(f[1], path, lineno, "instance"),
          parse_uint<std::size_t>(f[2], path, lineno, "origin"), false,
          parse_uint<std::uint64_t>(f[4], path, lineno, "count"), lineno};
    if (f[3] == "1") {
      r.replica = true;
    } else if (f[3] != "0") {
      throw ParseError(path, lineno, "is_replica must be 0 or 1");
    }
    rows[layer].push_back(r);
  }
  if (!header_seen) throw ParseError(path, lineno, "missing header");
  if (!meta_seen) throw ParseError(path, lineno, "missing #meta row");
  if (k == 0) throw ParseError(path, lineno, "k must be positive");

  RoutingTrace trace;
  std::size_t expected_layer = 0;
  for (auto& [layer_index, layer_rows] : rows) {
    if (layer_index != expected_layer++) {
      throw ParseError(path, layer_rows.front().line, "layers must be numbered 0..p-1");
    }
    std::sort(layer_rows.begin(), layer_rows.end(),
              [](const Row& a, const Row& b) { return a.instance < b.instance; });
    LayerTrace lt;
    lt.top_k = k;
    lt.tokens = n;
    std::size_t max_origin = 0;
    for (std::size_t i = 0; i < layer_rows.size(); ++i) {
      const Row& r = layer_rows[i];
      if (r.instance != i) throw ParseError(path, r.line, "instances must be numbered 0..m_i-1");
      lt.instance_origin.push_back(r.origin);
      lt.instance_is_replica.push_back(r.replica);
      lt.instance_counts.push_back(r.count);
      max_origin = std::max(max_origin, r.origin);
      if (!r.replica) ++lt.base_experts;
    }
    if (lt.base_experts != max_origin + 1) {
      throw ParseError(path, layer_rows.front().line,
                       "layer " + std::to_string(layer_index) +
                           " must have one original instance per origin");
    }
    lt.origin_counts.assign(lt.base_experts, 0);
    for (std::size_t i = 0; i < lt.instance_count(); ++i) {
      lt.origin_counts[lt.instance_origin[i]] += lt.instance_counts[i];
    }
    const std::uint64_t total =
        std::accumulate(lt.origin_counts.begin(), lt.origin_counts.end(), std::uint64_t{0});
    if (total != n * k) {
      throw ParseError(path, layer_rows.back().line,
                       "layer " + std::to_string(layer_index) + " counts sum to " +
                           std::to_string(total) + ", expected n*k = " + std::to_string(n * k));
    }
    trace.layers.push_back(std::move(lt));
  }
  if (trace.layers.empty()) throw ParseError(path, lineno, "trace has no rows");
  return trace;
}

void write_gap_csv(std::ostream& os, const GapMatrix& gaps) {
  os << "layer,rank,count,next_count,gap,normalized_gap\n";
  for (std::size_t l = 0; l < gaps.layers.size(); ++l) {
    const auto& g = gaps.layers[l];
    for (std::size_t r = 0; r < g.gaps.size(); ++r) {
      os << l << ',' << r << ',' << g.sorted_counts[r] << ',' << g.sorted_counts[r + 1] << ','
         << g.gaps[r] << ',' << format_double(g.normalized[r]) << '\n';
    }
  }
}

}  // namespace rqmoe
