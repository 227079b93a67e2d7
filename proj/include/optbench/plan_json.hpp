#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "optbench/plan.hpp"

namespace optbench {

inline constexpr std::string_view kPlanFormat = "optbench-plan/1";

/// Plain node tree (no envelope). With `annotate`, each node also carries its
/// `path` and derived `output_schema`; the parser ignores both.
nlohmann::json plan_node_to_json(const PlanNode& node, bool annotate = false, const std::string& path = "0");
PlanPtr plan_node_from_json(const nlohmann::json& j, const std::string& location = "/plan");

/// Full document: {"format": "optbench-plan/1", "plan": {...}}.
nlohmann::json plan_to_document(const PlanNode& root, bool annotate = false);
PlanPtr plan_from_document(const nlohmann::json& doc);

std::string serialize_plan(const PlanNode& root);
/// Throws ParseError (with a JSON-pointer location in detail) or ValidationError.
PlanPtr parse_plan(std::string_view text);

nlohmann::json schema_to_json(const Schema& s);
Schema schema_from_json(const nlohmann::json& j, const std::string& location);

}  // namespace optbench
