// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "rqmoe/expert_analysis.hpp"
#include "rqmoe/moe_model.hpp"
#include "rqmoe/numerics.hpp"
#include "rqmoe/rq_transform.hpp"

namespace rqmoe {

using Json = nlohmann::ordered_json;

inline constexpr int kModelFormatVersion = 1;

Json model_to_json(const MoeModel& model);
MoeModel model_from_json(const Json& doc, const std::string& path);

Json plan_to_json(const RQPlan& plan);
RQPlan plan_from_json(const Json& doc, const std::string& path);

Json importance_to_json(const ImportanceReport& report);
ImportanceReport importance_from_json(const Json& doc, const std::string& path);

Json memory_report_to_json(const MemoryReport& report);

/// One token per line, comma-separated reals, no header. '#' lines are comments.
void write_tokens_csv(std::ostream& os, const Matrix& tokens);
Matrix read_tokens_csv(std::istream& is, const std::string& path);

/// Parses a JSON document, mapping syntax errors to ParseError with a line.
Json parse_json(const std::string& text, const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace rqmoe
