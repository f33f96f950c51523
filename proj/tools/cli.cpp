// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "rqmoe/errors.hpp"
#include "rqmoe/expert_analysis.hpp"
#include "rqmoe/format.hpp"
#include "rqmoe/io.hpp"
#include "rqmoe/routing_metrics.hpp"
#include "rqmoe/rq_transform.hpp"
#include "rqmoe/streaming.hpp"
#include "rqmoe/workload.hpp"

#ifndef RQMOE_VERSION
#define RQMOE_VERSION "0.0.0"
#endif

namespace rqmoe::cli {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

template <class T>
std::string text_of(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    return format_double(v);
  } else {
    return std::to_string(v);
  }
}

// One subcommand's parsed flags plus the bookkeeping every output embeds.
class Command {
 public:
  Command(CLI::App& parent, std::string name, std::string description,
          std::string default_format)
      : format(std::move(default_format)),
        name_(std::move(name)),
        app_(parent.add_subcommand(name_, std::move(description))) {
    app_->fallthrough(false);
    option("--seed", seed, "Seed for every random choice (env RQ_SEED)")->envname("RQ_SEED");
    option("--output,-o", output, "Output path; stdout when absent");
    option("--format", format, "Report format")->check(CLI::IsMember({"json", "csv"}));
    flag("--no-timestamp", no_timestamp, "Omit the provenance timestamp");
  }

  template <class T>
  CLI::Option* option(const std::string& spec, T& var, const std::string& desc) {
    track(spec, [&var] { return text_of(var); });
    return app_->add_option(spec, var, desc)->capture_default_str();
  }

  CLI::Option* flag(const std::string& spec, bool& var, const std::string& desc) {
    track(spec, [&var] { return text_of(var); });
    return app_->add_flag(spec, var, desc);
  }

  CLI::App* app() const noexcept { return app_; }
  const std::string& name() const noexcept { return name_; }
  bool format_given() const { return app_->count("--format") > 0; }

  std::string load(const std::string& path) {
    std::string text = read_file(path);
    inputs_.emplace_back(path, sha256_hex(text));
    return text;
  }

  MoeModel load_model(const std::string& path) {
    return model_from_json(parse_json(load(path), path), path);
  }

  Matrix load_tokens(const std::string& path) {
    std::istringstream in(load(path));
    return read_tokens_csv(in, path);
  }

  RoutingTrace load_trace(const std::string& path) {
    std::istringstream in(load(path));
    return read_trace_csv(in, path);
  }

  Json provenance() const {
    Json flags = Json::object();
    for (const auto& [name, get] : tracked_) flags[name] = get();
    Json inputs = Json::array();
    for (const auto& [path, hash] : inputs_) inputs.push_back({{"path", path}, {"sha256", hash}});
    Json p{{"tool", "rqmoe"},
           {"version", RQMOE_VERSION},
           {"command", name_},
           {"flags", std::move(flags)},
           {"inputs", std::move(inputs)}};
    if (!no_timestamp) p["timestamp"] = utc_timestamp();
    return p;
  }

  void write_to(const std::string& path, const std::string& contents) const {
    if (path.empty()) {
      std::cout << contents;
      std::cout.flush();
    } else {
      write_file(path, contents);
    }
  }

  std::string json_text(Json doc) const {
    doc["provenance"] = provenance();
    return doc.dump(2) + "\n";
  }

  std::string csv_text(const std::string& body) const {
    return "#provenance " + provenance().dump() + "\n" + body;
  }

  void emit_json(Json doc) const { write_to(output, json_text(std::move(doc))); }
  void emit_csv(const std::string& body) const { write_to(output, csv_text(body)); }

  void require_format(const char* only) const {
    if (format_given() && format != only) {
      throw UsageError(name_ + " only writes " + only);
    }
  }

  std::string format;
  std::uint64_t seed = 0;
  std::string output;
  bool no_timestamp = false;

 private:
  void track(const std::string& spec, std::function<std::string()> get) {
    std::string name = spec.substr(0, spec.find(','));
    tracked_.emplace_back(std::move(name), std::move(get));
  }

  std::string name_;
  CLI::App* app_;
  std::vector<std::pair<std::string, std::function<std::string()>>> tracked_;
  std::vector<std::pair<std::string, std::string>> inputs_;
};

// Comma CSV to whitespace columns with a '#' header line and NaN for blanks.
std::string gnuplot_layout(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    std::string row;
    std::string field;
    std::istringstream fields(line);
    bool first = true;
    while (std::getline(fields, field, ',')) {
      if (!first) row += ' ';
      row += field.empty() ? "NaN" : field;
      first = false;
    }
    if (!line.empty() && line.back() == ',') row += " NaN";
    out << (header ? "# " : "") << row << '\n';
    header = false;
  }
  return out.str();
}

PrecisionScheme resolve_scheme(const std::string& text, PrecisionScheme base) {
  if (text == "auto") {
    switch (base) {
      case PrecisionScheme::Full32: return PrecisionScheme::Half16;
      case PrecisionScheme::Half16: return PrecisionScheme::Int8Sym;
      case PrecisionScheme::Int8Sym:
        throw UsageError("model is already int8; no lower scheme available");
    }
  }
  const auto scheme = parse_scheme(text);
  if (!scheme) throw UsageError("unknown scheme '" + text + "'");
  return *scheme;
}

const std::vector<std::string> kSchemeChoices = {"auto", "half16", "int8"};

// ---------------------------------------------------------------------------

struct GenArgs {
  std::size_t layers = 1;
  std::size_t experts = 8;
  std::size_t topk = 1;
  std::size_t dim = 16;
  std::size_t tokens = 1000;
  std::string skew = "uniform";
  double zipf_exponent = 1.0;
  double bias_strength = 0.0;
  std::string base_scheme = "full32";
  std::string name = "synthetic";
  std::string tokens_out;
};

void run_gen(Command& cmd, const GenArgs& a) {
  cmd.require_format("json");
  if (a.topk == 0 || a.topk >= a.experts) {
    throw UsageError("--topk must satisfy 0 < k < m (got k=" + std::to_string(a.topk) +
                     ", m=" + std::to_string(a.experts) + ")");
  }
  SkewSpec skew;
  skew.mode = *parse_skew_mode(a.skew);
  skew.bias_strength = a.bias_strength;
  if (skew.mode == SkewMode::Uniform) {
    if (cmd.app()->count("--zipf-exponent") > 0 && a.zipf_exponent != 0.0) {
      throw UsageError("--zipf-exponent requires --skew zipf or directional");
    }
    skew.zipf_exponent = 0.0;
  } else {
    skew.zipf_exponent = a.zipf_exponent;
  }
  try {
    skew.validate();
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  MoeModel model = gen_model(cmd.seed, {a.layers, a.experts, a.topk, a.dim}, skew);
  const auto base = parse_scheme(a.base_scheme);
  if (*base != PrecisionScheme::Full32) model = with_base_scheme(model, *base);
  model = MoeModel(model.layers(), {a.name, cmd.seed});

  if (!a.tokens_out.empty()) {
    std::ostringstream body;
    write_tokens_csv(body, gen_tokens(cmd.seed, a.tokens, a.dim));
    cmd.write_to(a.tokens_out, cmd.csv_text(body.str()));
  }
  cmd.emit_json(model_to_json(model));
}

// ---------------------------------------------------------------------------

struct TraceSource {
  std::string trace;
  std::string model;
  std::string tokens;
};

void add_trace_source(Command& cmd, TraceSource& src, bool allow_trace_file) {
  if (allow_trace_file) cmd.option("--trace", src.trace, "Trace CSV");
  cmd.option("--model", src.model, "Model JSON");
  cmd.option("--tokens", src.tokens, "Token CSV");
}

RoutingTrace obtain_trace(Command& cmd, const TraceSource& src) {
  if (!src.trace.empty()) {
    if (!src.model.empty() || !src.tokens.empty()) {
      throw UsageError("give either --trace or --model with --tokens, not both");
    }
    return cmd.load_trace(src.trace);
  }
  if (src.model.empty() || src.tokens.empty()) {
    throw UsageError(cmd.name() + " needs --model and --tokens" +
                     (cmd.app()->get_option_no_throw("--trace") ? " (or --trace)" : ""));
  }
  const MoeModel model = cmd.load_model(src.model);
  const Matrix tokens = cmd.load_tokens(src.tokens);
  RoutingTrace trace;
  forward_model(model, tokens, &trace);
  return trace;
}

void run_trace(Command& cmd, const TraceSource& src) {
  cmd.require_format("csv");
  const RoutingTrace trace = obtain_trace(cmd, src);
  std::ostringstream body;
  write_trace_csv(body, trace);
  cmd.emit_csv(body.str());
}

void run_lis(Command& cmd, const TraceSource& src, const std::string& granularity) {
  const RoutingTrace trace = obtain_trace(cmd, src);
  const Granularity g = granularity == "origin" ? Granularity::Origin : Granularity::Instance;
  std::vector<double> scores;
  for (std::size_t l = 0; l < trace.layers.size(); ++l) scores.push_back(lis(trace, l, g));
  double sum = 0.0;
  for (double s : scores) sum += s;
  const double mean = sum / static_cast<double>(scores.size());

  if (cmd.format == "csv") {
    std::ostringstream body;
    body << "layer,lis\n";
    for (std::size_t l = 0; l < scores.size(); ++l) body << l << ',' << format_double(scores[l]) << '\n';
    body << "mean," << format_double(mean) << '\n';
    cmd.emit_csv(body.str());
    return;
  }
  Json layers = Json::object();
  for (std::size_t l = 0; l < scores.size(); ++l) layers[std::to_string(l)] = scores[l];
  cmd.emit_json(Json{{"granularity", granularity}, {"layers", std::move(layers)}, {"mean", mean}});
}

// ---------------------------------------------------------------------------

struct AnalysisArgs {
  std::string model;
  std::string tokens;
  double calib_fraction = kDefaultCalibFraction;
  double sparsity = kDefaultSparsity;
  std::string replica_scheme = "auto";
  std::string quant_scheme = "auto";
};

void add_analysis_options(Command& cmd, AnalysisArgs& a) {
  cmd.option("--model", a.model, "Model JSON")->required();
  cmd.option("--tokens", a.tokens, "Token CSV")->required();
  cmd.option("--calib-fraction", a.calib_fraction, "Fraction of tokens used for calibration")
      ->check(CLI::Range(0.0, 1.0));
  cmd.option("--sparsity", a.sparsity, "Pruned fraction per output row for importance scores")
      ->check(CLI::Range(0.0, 1.0));
  cmd.option("--replica-scheme", a.replica_scheme, "Replica precision")
      ->check(CLI::IsMember(kSchemeChoices));
  cmd.option("--quant-scheme", a.quant_scheme, "Precision of the least important expert")
      ->check(CLI::IsMember(kSchemeChoices));
}

void check_fractions(const AnalysisArgs& a) {
  if (!(a.calib_fraction > 0.0)) throw UsageError("--calib-fraction must be in (0, 1]");
  if (!(a.sparsity > 0.0)) throw UsageError("--sparsity must be in (0, 1]");
}

void run_plan(Command& cmd, const AnalysisArgs& a) {
  cmd.require_format("json");
  check_fractions(a);
  const MoeModel model = cmd.load_model(a.model);
  const Matrix tokens = cmd.load_tokens(a.tokens);
  const PrecisionScheme base = base_scheme(model.layer(0));
  const SchemePair schemes{resolve_scheme(a.replica_scheme, base),
                           resolve_scheme(a.quant_scheme, base)};

  const Matrix calib = sample_calibration(tokens, a.calib_fraction, cmd.seed);
  const HeavyHitterList heavy = find_heavy_hitters(model, calib);
  const ImportanceReport importance = wanda_expert_scores(model, calib, a.sparsity);
  const RQPlan plan = make_plan(heavy, importance, schemes);

  for (std::size_t l = 0; l < plan.layers.size(); ++l) {
    if (plan.layers[l].replicate_id == plan.layers[l].quantize_id) {
      std::cerr << "note: layer " << l << ": heavy hitter " << plan.layers[l].replicate_id
                << " is also the least important expert\n";
    }
  }

  Json doc = plan_to_json(plan);
  doc["calibration"] = {{"fraction", a.calib_fraction},
                        {"seed", cmd.seed},
                        {"tokens", calib.rows()},
                        {"source_tokens", tokens.rows()}};
  doc["sparsity"] = a.sparsity;
  doc["heavy_hitters"] = heavy.experts;
  doc["importance"] = importance_to_json(importance);
  cmd.emit_json(std::move(doc));
}

// ---------------------------------------------------------------------------

struct ApplyArgs {
  std::string model;
  std::string plan;
  std::string memory_report;
};

void run_apply(Command& cmd, const ApplyArgs& a) {
  cmd.require_format("json");
  const MoeModel model = cmd.load_model(a.model);
  const RQPlan plan = plan_from_json(parse_json(cmd.load(a.plan), a.plan), a.plan);
  for (std::size_t l = 0; l < plan.layers.size(); ++l) {
    if (plan.layers[l].replicate_id == plan.layers[l].quantize_id) {
      std::cerr << "note: layer " << l << ": replicating and quantizing expert "
                << plan.layers[l].replicate_id << "\n";
    }
  }
  const MoeModel transformed = apply_plan(model, plan);
  const MemoryReport memory = memory_report(model, transformed);
  if (memory.over_budget()) {
    std::cerr << "warning: transformed experts use " << memory.total.bytes_after
              << " bytes, above the original " << memory.total.bytes_before << "\n";
  }

  Json model_doc = model_to_json(transformed);
  model_doc["memory"] = memory_report_to_json(memory);
  cmd.emit_json(std::move(model_doc));

  const std::string report_text = cmd.json_text(memory_report_to_json(memory));
  if (!a.memory_report.empty()) {
    cmd.write_to(a.memory_report, report_text);
  } else if (!cmd.output.empty()) {
    cmd.write_to(cmd.output + ".memory.json", report_text);
  } else {
    std::cerr << report_text;
  }
}

// ---------------------------------------------------------------------------

struct StreamArgs {
  AnalysisArgs analysis;
  std::size_t timesteps = kDefaultTimesteps;
  std::string strategy = "cumulative";
  bool warm_start = false;
  bool no_adversarial = false;
  bool gnuplot = false;
};

void run_stream_cmd(Command& cmd, const StreamArgs& a) {
  cmd.require_format("csv");
  check_fractions(a.analysis);
  if (a.timesteps < 2) throw UsageError("--timesteps must be at least 2");
  const MoeModel model = cmd.load_model(a.analysis.model);
  const Matrix tokens = cmd.load_tokens(a.analysis.tokens);
  const PrecisionScheme base = base_scheme(model.layer(0));

  const Matrix calib = sample_calibration(tokens, a.analysis.calib_fraction, cmd.seed);
  StreamConfig cfg;
  cfg.timesteps = a.timesteps;
  cfg.strategy = *parse_strategy(a.strategy);
  cfg.replica_scheme = resolve_scheme(a.analysis.replica_scheme, base);
  cfg.quant_scheme = resolve_scheme(a.analysis.quant_scheme, base);
  cfg.quantize_ids = wanda_expert_scores(model, calib, a.analysis.sparsity).chosen;
  if (a.warm_start) cfg.warm_start = find_heavy_hitters(model, calib);

  const std::vector<Matrix> stream = a.no_adversarial
                                         ? split_segments(tokens, a.timesteps)
                                         : build_adversarial_stream(model, tokens, a.timesteps);
  const StreamReport report = run_stream(model, stream, cfg);
  std::ostringstream body;
  write_stream_csv(body, report);
  cmd.emit_csv(a.gnuplot ? gnuplot_layout(body.str()) : body.str());
}

// ---------------------------------------------------------------------------

void run_report(Command& cmd, const TraceSource& src, bool gnuplot) {
  const GapMatrix gaps = gap_matrix(obtain_trace(cmd, src));
  if (cmd.format == "json") {
    Json layers = Json::array();
    for (std::size_t l = 0; l < gaps.layers.size(); ++l) {
      const auto& g = gaps.layers[l];
      layers.push_back({{"layer", l},
                        {"sorted_counts", g.sorted_counts},
                        {"gaps", g.gaps},
                        {"normalized", g.normalized}});
    }
    cmd.emit_json(Json{{"layers", std::move(layers)}});
    return;
  }
  std::ostringstream body;
  write_gap_csv(body, gaps);
  cmd.emit_csv(gnuplot ? gnuplot_layout(body.str()) : body.str());
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Replicate-and-quantize toolkit for sparse mixture-of-experts load balancing",
               "rqmoe"};
  app.set_version_flag("--version", RQMOE_VERSION);
  app.require_subcommand(1);

  std::vector<std::unique_ptr<Command>> commands;
  auto make = [&](const char* name, const char* desc,
                  const char* default_format = "json") -> Command& {
    commands.push_back(std::make_unique<Command>(app, name, desc, default_format));
    return *commands.back();
  };
  std::function<void()> action;

  GenArgs gen_args;
  {
    Command& c = make("gen", "Generate a synthetic model and token set");
    c.option("--layers", gen_args.layers, "MoE layers (p)")->check(CLI::PositiveNumber);
    c.option("--experts", gen_args.experts, "Experts per layer (m)")->check(CLI::PositiveNumber);
    c.option("--topk", gen_args.topk, "Experts per token (k < m)")->check(CLI::PositiveNumber);
    c.option("--dim", gen_args.dim, "Feature dimension (d)")->check(CLI::PositiveNumber);
    c.option("--tokens", gen_args.tokens, "Token rows written to --tokens-out")
        ->check(CLI::PositiveNumber);
    c.option("--skew", gen_args.skew, "Router skew")
        ->check(CLI::IsMember({"uniform", "zipf", "directional"}));
    c.option("--zipf-exponent", gen_args.zipf_exponent, "Per-expert skew decay exponent")
        ->check(CLI::NonNegativeNumber);
    c.option("--bias-strength", gen_args.bias_strength, "Skew magnitude")
        ->check(CLI::NonNegativeNumber);
    c.option("--base-scheme", gen_args.base_scheme, "Expert storage precision")
        ->check(CLI::IsMember({"full32", "half16"}));
    c.option("--name", gen_args.name, "Model name");
    c.option("--tokens-out", gen_args.tokens_out, "Token CSV path");
    c.app()->callback([&] { action = [&] { run_gen(c, gen_args); }; });
  }

  TraceSource trace_src;
  {
    Command& c = make("trace", "Route tokens and write per-instance counts", "csv");
    add_trace_source(c, trace_src, false);
    c.app()->callback([&] { action = [&] { run_trace(c, trace_src); }; });
  }

  TraceSource lis_src;
  std::string granularity = "origin";
  {
    Command& c = make("lis", "Load imbalance score per layer");
    add_trace_source(c, lis_src, true);
    c.option("--granularity", granularity, "Count base experts or instances")
        ->check(CLI::IsMember({"origin", "instance"}));
    c.app()->callback([&] { action = [&] { run_lis(c, lis_src, granularity); }; });
  }

  AnalysisArgs plan_args;
  {
    Command& c = make("plan", "Find heavy-hitter and least important experts");
    add_analysis_options(c, plan_args);
    c.app()->callback([&] { action = [&] { run_plan(c, plan_args); }; });
  }

  ApplyArgs apply_args;
  {
    Command& c = make("apply", "Replicate and quantize experts per a plan");
    c.option("--model", apply_args.model, "Model JSON")->required();
    c.option("--plan", apply_args.plan, "Plan JSON")->required();
    c.option("--memory-report", apply_args.memory_report, "Memory report JSON path");
    c.app()->callback([&] { action = [&] { run_apply(c, apply_args); }; });
  }

  StreamArgs stream_args;
  {
    Command& c =
        make("stream", "Simulate streaming inference with per-timestep replicas", "csv");
    add_analysis_options(c, stream_args.analysis);
    c.option("--timesteps", stream_args.timesteps, "Stream segments")->check(CLI::PositiveNumber);
    c.option("--strategy", stream_args.strategy, "History used to pick the replica")
        ->check(CLI::IsMember({"cumulative", "window1"}));
    c.flag("--warm-start-replica", stream_args.warm_start,
           "Replicate the calibration heavy hitter at the first timestep");
    c.flag("--no-adversarial", stream_args.no_adversarial,
           "Split the token file as is instead of filtering heavy-hitter tokens");
    c.flag("--gnuplot-style", stream_args.gnuplot, "Whitespace columns");
    c.app()->callback([&] { action = [&] { run_stream_cmd(c, stream_args); }; });
  }

  TraceSource report_src;
  bool report_gnuplot = false;
  {
    Command& c = make("report", "Gap matrix between consecutively ranked instances", "csv");
    add_trace_source(c, report_src, true);
    c.flag("--gnuplot-style", report_gnuplot, "Whitespace columns");
    c.app()->callback([&] { action = [&] { run_report(c, report_src, report_gnuplot); }; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    action();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace rqmoe::cli
