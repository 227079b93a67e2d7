#include "optbench/plan_json.hpp"

namespace optbench {

using nlohmann::json;

json schema_to_json(const Schema& s) {
  json cols = json::array();
  for (const auto& c : s.columns()) cols.push_back({{"name", c.name}, {"dtype", c.dtype.to_string()}});
  return cols;
}

Schema schema_from_json(const json& j, const std::string& location) {
  if (!j.is_array()) fail(ErrorCode::ParseError, "schema must be an array", location);
  std::vector<Column> cols;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& c = j[i];
    if (!c.is_object() || !c.contains("name") || !c.contains("dtype"))
      fail(ErrorCode::ParseError, "schema column needs name and dtype", location + "/" + std::to_string(i));
    try {
      cols.push_back({c["name"].get<std::string>(), DType::parse(c["dtype"].get<std::string>())});
    } catch (const Error& e) {
      fail(ErrorCode::ParseError, e.message(), location + "/" + std::to_string(i));
    }
  }
  return Schema(std::move(cols));
}

json plan_node_to_json(const PlanNode& node, bool annotate, const std::string& path) {
  json j{{"kind", std::string(node_kind_name(node.kind()))}};
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, ScanOp>) {
          j["table"] = o.table;
          j["schema"] = schema_to_json(o.schema);
        } else if constexpr (std::is_same_v<T, FilterOp>) {
          j["predicate"] = expr_to_json(*o.predicate);
        } else if constexpr (std::is_same_v<T, ProjectOp>) {
          json items = json::array();
          for (const auto& it : o.items) items.push_back({{"name", it.name}, {"expr", expr_to_json(*it.expr)}});
          j["items"] = std::move(items);
        } else if constexpr (std::is_same_v<T, JoinOp>) {
          j["join_type"] = o.type == JoinType::Inner ? "inner" : "cross";
          if (o.condition) j["condition"] = expr_to_json(*o.condition);
        } else if constexpr (std::is_same_v<T, AggregateOp>) {
          json keys = json::array();
          for (const auto& k : o.keys) keys.push_back({{"name", k.name}, {"expr", expr_to_json(*k.expr)}});
          json aggs = json::array();
          for (const auto& a : o.aggregates) {
            json item{{"fn", std::string(agg_fn_name(a.fn))}, {"name", a.name}};
            if (a.arg) item["arg"] = expr_to_json(*a.arg);
            aggs.push_back(std::move(item));
          }
          j["keys"] = std::move(keys);
          j["aggregates"] = std::move(aggs);
        } else if constexpr (std::is_same_v<T, LimitOp>) {
          j["n"] = o.n;
        } else {
          j["n"] = o.n;
          j["seed"] = o.seed;
        }
      },
      node.op());
  json children = json::array();
  for (std::size_t i = 0; i < node.children().size(); ++i)
    children.push_back(plan_node_to_json(*node.child(i), annotate, child_path(path, i)));
  j["children"] = std::move(children);
  if (annotate) {
    j["path"] = path;
    j["hash"] = hex64(node.hash());
    j["output_schema"] = schema_to_json(node.schema());
  }
  return j;
}

namespace {

const json& field(const json& j, const char* key, const std::string& location) {
  if (!j.contains(key)) fail(ErrorCode::ParseError, std::string("missing field '") + key + "'", location);
  return j[key];
}

std::vector<NamedExpr> named_exprs(const json& arr, const std::string& location) {
  if (!arr.is_array()) fail(ErrorCode::ParseError, "expected an array", location);
  std::vector<NamedExpr> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string loc = location + "/" + std::to_string(i);
    const auto& it = arr[i];
    if (!it.is_object()) fail(ErrorCode::ParseError, "expected an object", loc);
    out.push_back({expr_from_json(field(it, "expr", loc), loc + "/expr"), field(it, "name", loc).get<std::string>()});
  }
  return out;
}

void check_fields(const json& j, std::initializer_list<const char*> allowed, const std::string& location) {
  for (const auto& [key, _] : j.items()) {
    bool ok = key == "kind" || key == "children" || key == "path" || key == "hash" || key == "output_schema";
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) fail(ErrorCode::ParseError, "unknown field '" + key + "'", location);
  }
}

}  // namespace

PlanPtr plan_node_from_json(const json& j, const std::string& location) {
  if (!j.is_object()) fail(ErrorCode::ParseError, "plan node must be an object", location);
  try {
    const std::string kind = field(j, "kind", location).get<std::string>();
    const json& cj = field(j, "children", location);
    if (!cj.is_array()) fail(ErrorCode::ParseError, "children must be an array", location + "/children");
    std::vector<PlanPtr> children;
    for (std::size_t i = 0; i < cj.size(); ++i)
      children.push_back(plan_node_from_json(cj[i], location + "/children/" + std::to_string(i)));

    auto arity = [&](std::size_t n) {
      if (children.size() != n)
        fail(ErrorCode::ParseError, kind + " expects " + std::to_string(n) + " children", location + "/children");
    };
    PlanNode::Op op;
    if (kind == "scan") {
      check_fields(j, {"table", "schema"}, location);
      arity(0);
      op = ScanOp{field(j, "table", location).get<std::string>(), schema_from_json(field(j, "schema", location), location + "/schema")};
    } else if (kind == "filter") {
      check_fields(j, {"predicate"}, location);
      arity(1);
      op = FilterOp{expr_from_json(field(j, "predicate", location), location + "/predicate")};
    } else if (kind == "project") {
      check_fields(j, {"items"}, location);
      arity(1);
      op = ProjectOp{named_exprs(field(j, "items", location), location + "/items")};
    } else if (kind == "join") {
      check_fields(j, {"join_type", "condition"}, location);
      arity(2);
      const std::string jt = field(j, "join_type", location).get<std::string>();
      if (jt != "inner" && jt != "cross") fail(ErrorCode::ParseError, "join_type must be inner or cross", location + "/join_type");
      ExprPtr cond;
      if (j.contains("condition") && !j["condition"].is_null())
        cond = expr_from_json(j["condition"], location + "/condition");
      op = JoinOp{jt == "inner" ? JoinType::Inner : JoinType::Cross, cond};
    } else if (kind == "aggregate") {
      check_fields(j, {"keys", "aggregates"}, location);
      arity(1);
      AggregateOp agg;
      agg.keys = named_exprs(j.value("keys", json::array()), location + "/keys");
      const json& aj = field(j, "aggregates", location);
      if (!aj.is_array()) fail(ErrorCode::ParseError, "aggregates must be an array", location + "/aggregates");
      for (std::size_t i = 0; i < aj.size(); ++i) {
        const std::string loc = location + "/aggregates/" + std::to_string(i);
        AggregateItem item{agg_fn_from_name(field(aj[i], "fn", loc).get<std::string>()), nullptr,
                           field(aj[i], "name", loc).get<std::string>()};
        if (aj[i].contains("arg") && !aj[i]["arg"].is_null()) item.arg = expr_from_json(aj[i]["arg"], loc + "/arg");
        agg.aggregates.push_back(std::move(item));
      }
      op = std::move(agg);
    } else if (kind == "limit") {
      check_fields(j, {"n"}, location);
      arity(1);
      op = LimitOp{field(j, "n", location).get<std::int64_t>()};
    } else if (kind == "sample") {
      check_fields(j, {"n", "seed"}, location);
      arity(1);
      op = SampleOp{field(j, "n", location).get<std::int64_t>(), field(j, "seed", location).get<std::uint64_t>()};
    } else {
      fail(ErrorCode::ParseError, "unknown node kind '" + kind + "'", location + "/kind");
    }
    try {
      return std::make_shared<const PlanNode>(std::move(op), std::move(children));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ParseError) throw;
      fail(ErrorCode::ValidationError, e.message(), location);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("malformed plan node: ") + e.what(), location);
  }
}

json plan_to_document(const PlanNode& root, bool annotate) {
  return {{"format", std::string(kPlanFormat)}, {"plan", plan_node_to_json(root, annotate)}};
}

PlanPtr plan_from_document(const json& doc) {
  if (!doc.is_object()) fail(ErrorCode::ParseError, "plan document must be an object", "");
  if (!doc.contains("format") || doc["format"] != kPlanFormat)
    fail(ErrorCode::ParseError, "expected format " + std::string(kPlanFormat), "/format");
  if (!doc.contains("plan")) fail(ErrorCode::ParseError, "missing field 'plan'", "");
  return plan_node_from_json(doc["plan"], "/plan");
}

std::string serialize_plan(const PlanNode& root) { return plan_to_document(root).dump(2); }

PlanPtr parse_plan(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("invalid JSON: ") + e.what(), "");
  }
  return plan_from_document(doc);
}

}  // namespace optbench
