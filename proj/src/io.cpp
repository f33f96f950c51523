// SPDX-License-Identifier: Apache-2.0
#include "rqmoe/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "rqmoe/errors.hpp"
#include "rqmoe/format.hpp"

namespace rqmoe {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Json matrix_rows(const Matrix& m) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  }
  return rows;
}

template <class T>
Json nested_rows(const std::vector<T>& flat, std::size_t rows, std::size_t cols) {
  Json out = Json::array();
  for (std::size_t r = 0; r < rows; ++r) {
    Json row = Json::array();
    for (std::size_t c = 0; c < cols; ++c) row.push_back(flat[r * cols + c]);
    out.push_back(std::move(row));
  }
  return out;
}

template <class T>
std::vector<T> flatten(const Json& rows, std::size_t& n_rows, std::size_t& n_cols) {
  n_rows = rows.size();
  n_cols = n_rows == 0 ? 0 : rows.at(0).size();
  std::vector<T> flat;
  flat.reserve(n_rows * n_cols);
  for (const auto& row : rows) {
    if (!row.is_array() || row.size() != n_cols) throw ShapeError("ragged nested array");
    for (const auto& v : row) flat.push_back(v.get<T>());
  }
  return flat;
}

Matrix matrix_from(const Json& rows) {
  std::size_t r = 0, c = 0;
  auto flat = flatten<double>(rows, r, c);
  return Matrix(r, c, std::move(flat));
}

Json expert_to_json(const ExpertInstance& inst) {
  Json e;
  e["origin_id"] = inst.origin_id;
  e["is_replica"] = inst.is_replica;
  e["scheme"] = std::string(to_string(inst.weights.scheme()));
  const auto& q = inst.weights;
  std::visit(Overloaded{
                 [&](const Full32Payload& p) { e["payload"] = nested_rows(p.values, q.rows(), q.cols()); },
                 [&](const Half16Payload& p) { e["payload"] = nested_rows(p.codes, q.rows(), q.cols()); },
                 [&](const Int8Payload& p) {
                   std::vector<int> codes(p.codes.begin(), p.codes.end());
                   e["payload"] = nested_rows(codes, q.rows(), q.cols());
                   e["scales"] = p.scales;
                 },
             },
             q.payload());
  return e;
}

ExpertInstance expert_from_json(const Json& e) {
  ExpertInstance inst;
  inst.origin_id = e.at("origin_id").get<std::size_t>();
  inst.is_replica = e.at("is_replica").get<bool>();
  const auto scheme_text = e.at("scheme").get<std::string>();
  const auto scheme = parse_scheme(scheme_text);
  if (!scheme) throw ArgumentError("unknown scheme '" + scheme_text + "'");
  std::size_t rows = 0, cols = 0;
  switch (*scheme) {
    case PrecisionScheme::Full32: {
      auto values = flatten<double>(e.at("payload"), rows, cols);
      inst.weights = QuantizedMatrix(rows, cols, Full32Payload{std::move(values)});
      break;
    }
    case PrecisionScheme::Half16: {
      auto codes = flatten<std::uint16_t>(e.at("payload"), rows, cols);
      inst.weights = QuantizedMatrix(rows, cols, Half16Payload{std::move(codes)});
      break;
    }
    case PrecisionScheme::Int8Sym: {
      auto wide = flatten<int>(e.at("payload"), rows, cols);
      Int8Payload p;
      for (int c : wide) {
        if (c < -127 || c > 127) throw ArgumentError("int8 code out of range");
        p.codes.push_back(static_cast<std::int8_t>(c));
      }
      p.scales = e.at("scales").get<std::vector<double>>();
      inst.weights = QuantizedMatrix(rows, cols, std::move(p));
      break;
    }
  }
  return inst;
}

template <class F>
auto with_schema_errors(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw ParseError(path, 0, e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(path, 0, e.what());
  }
}

PrecisionScheme scheme_from(const Json& v) {
  const auto text = v.get<std::string>();
  const auto s = parse_scheme(text);
  if (!s) throw ArgumentError("unknown scheme '" + text + "'");
  return *s;
}

}  // namespace

Json model_to_json(const MoeModel& model) {
  Json doc;
  const MoeLayer& first = model.layer(0);
  doc["header"] = {{"format_version", kModelFormatVersion},
                   {"p", model.layer_count()},
                   {"m", first.base_expert_count()},
                   {"k", first.top_k()},
                   {"d_in", model.d_in()},
                   {"d_out", model.d_out()},
                   {"seed", model.metadata().seed},
                   {"name", model.metadata().name}};
  Json layers = Json::array();
  for (const auto& layer : model.layers()) {
    Json l;
    l["router"] = {{"weights", matrix_rows(layer.router().weights)},
                   {"bias", layer.router().bias}};
    Json experts = Json::array();
    for (const auto& inst : layer.instances()) experts.push_back(expert_to_json(inst));
    l["experts"] = std::move(experts);
    layers.push_back(std::move(l));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

MoeModel model_from_json(const Json& doc, const std::string& path) {
  return with_schema_errors(path, [&] {
    const Json& header = doc.at("header");
    const int version = header.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw ArgumentError("unsupported format_version " + std::to_string(version));
    }
    const auto p = header.at("p").get<std::size_t>();
    const auto m = header.at("m").get<std::size_t>();
    const auto k = header.at("k").get<std::size_t>();
    const Json& layers_json = doc.at("layers");
    if (layers_json.size() != p) throw ArgumentError("header p does not match layer count");
    std::vector<MoeLayer> layers;
    for (const auto& lj : layers_json) {
      Router router{matrix_from(lj.at("router").at("weights")),
                    lj.at("router").at("bias").get<std::vector<double>>()};
      if (router.expert_count() != m) throw ArgumentError("router rows do not match header m");
      std::vector<ExpertInstance> experts;
      for (const auto& e : lj.at("experts")) experts.push_back(expert_from_json(e));
      layers.emplace_back(std::move(router), k, std::move(experts));
    }
    MoeModel model(std::move(layers),
                   {header.at("name").get<std::string>(), header.at("seed").get<std::uint64_t>()});
    if (model.d_in() != header.at("d_in").get<std::size_t>() ||
        model.d_out() != header.at("d_out").get<std::size_t>()) {
      throw ArgumentError("header d_in/d_out do not match the layers");
    }
    return model;
  });
}

Json plan_to_json(const RQPlan& plan) {
  Json layers = Json::array();
  for (std::size_t l = 0; l < plan.layers.size(); ++l) {
    const auto& lp = plan.layers[l];
    layers.push_back({{"layer", l},
                      {"replicate_id", lp.replicate_id},
                      {"quantize_id", lp.quantize_id},
                      {"replica_scheme", std::string(to_string(lp.replica_scheme))},
                      {"quant_scheme", std::string(to_string(lp.quant_scheme))}});
  }
  return Json{{"layers", std::move(layers)}};
}

RQPlan plan_from_json(const Json& doc, const std::string& path) {
  return with_schema_errors(path, [&] {
    RQPlan plan;
    for (const auto& lj : doc.at("layers")) {
      plan.layers.push_back({lj.at("replicate_id").get<std::size_t>(),
                             lj.at("quantize_id").get<std::size_t>(),
                             scheme_from(lj.at("replica_scheme")),
                             scheme_from(lj.at("quant_scheme"))});
    }
    return plan;
  });
}

Json importance_to_json(const ImportanceReport& report) {
  Json layers = Json::array();
  for (std::size_t l = 0; l < report.scores.size(); ++l) {
    layers.push_back({{"layer", l}, {"scores", report.scores[l]}, {"chosen", report.chosen[l]}});
  }
  return Json{{"sparsity", report.sparsity}, {"layers", std::move(layers)}};
}

ImportanceReport importance_from_json(const Json& doc, const std::string& path) {
  return with_schema_errors(path, [&] {
    ImportanceReport r;
    r.sparsity = doc.at("sparsity").get<double>();
    for (const auto& lj : doc.at("layers")) {
      r.scores.push_back(lj.at("scores").get<std::vector<double>>());
      r.chosen.push_back(lj.at("chosen").get<std::size_t>());
    }
    return r;
  });
}

Json memory_report_to_json(const MemoryReport& report) {
  auto entry = [](const LayerMemory& m) {
    return Json{{"bytes_before", m.bytes_before},
                {"bytes_after", m.bytes_after},
                {"scale_overhead_bytes", m.scale_overhead_bytes}};
  };
  Json layers = Json::array();
  for (const auto& lm : report.layers) layers.push_back(entry(lm));
  Json total = entry(report.total);
  total["over_budget"] = report.over_budget();
  return Json{{"layers", std::move(layers)}, {"total", std::move(total)}};
}

void write_tokens_csv(std::ostream& os, const Matrix& tokens) {
  for (std::size_t r = 0; r < tokens.rows(); ++r) {
    const auto row = tokens.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) os << ',';
      os << format_double(row[c]);
    }
    os << '\n';
  }
}

Matrix read_tokens_csv(std::istream& is, const std::string& path) {
  std::vector<double> values;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::size_t fields = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t end = std::min(line.find(',', start), line.size());
      const char* first = line.data() + start;
      const char* last = line.data() + end;
      while (first < last && *first == ' ') ++first;
      double v = 0.0;
      auto res = std::from_chars(first, last, v);
      if (res.ec != std::errc{} || res.ptr != last || !std::isfinite(v)) {
        throw ParseError(path, lineno,
                         "bad number '" + line.substr(start, end - start) + "'");
      }
      values.push_back(v);
      ++fields;
      if (end == line.size()) break;
      start = end + 1;
    }
    if (rows == 0) {
      cols = fields;
    } else if (fields != cols) {
      throw ParseError(path, lineno,
                       "expected " + std::to_string(cols) + " columns, got " +
                           std::to_string(fields));
    }
    ++rows;
  }
  return Matrix(rows, cols, std::move(values));
}

Json parse_json(const std::string& text, const std::string& path) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1;
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    for (std::size_t i = 0; i + 1 < upto; ++i) {
      if (text[i] == '\n') ++line;
    }
    throw ParseError(path, line, e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << contents;
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace rqmoe
