#include "optbench/statistics.hpp"

#include <algorithm>
#include <cmath>

#include "optbench/executor.hpp"
#include "optbench/ml_kernels.hpp"

namespace optbench {

using nlohmann::json;

std::string_view stat_source_name(StatSource s) {
  switch (s) {
    case StatSource::Estimated: return "estimated";
    case StatSource::Sampled: return "sampled";
    case StatSource::Metadata: return "metadata";
  }
  return "?";
}

const std::vector<std::string>& statistic_names() {
  static const std::vector<std::string> names = {"est_cardinality", "est_selectivity", "join_ratio", "input_rows",
                                                 "nnz_ratio",       "sparsity",        "zero_rows",  "zero_cols",
                                                 "flops",           "num_parameters",  "forest_num_trees"};
  return names;
}

bool is_statistic_name(std::string_view name) {
  const auto& n = statistic_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

double predicate_selectivity(const Expr& p) {
  if (auto* c = p.as<Compare>()) {
    switch (c->op) {
      case CompareOp::Eq: return 0.1;
      case CompareOp::Ne: return 0.9;
      default: return 1.0 / 3.0;
    }
  }
  if (auto* l = p.as<Logical>()) {
    switch (l->op) {
      case LogicalOp::And: {
        double s = 1.0;
        for (const auto& a : p.args()) s *= predicate_selectivity(*a);
        return s;
      }
      case LogicalOp::Or: {
        double s = 0.0;
        for (const auto& a : p.args()) s += predicate_selectivity(*a);
        return std::min(1.0, s);
      }
      case LogicalOp::Not: return 1.0 - predicate_selectivity(*p.arg(0));
    }
  }
  if (auto* lit = p.as<Literal>(); lit && lit->value.is_bool()) return lit->value.as_bool() ? 1.0 : 0.0;
  return 1.0 / 3.0;
}

const NodeStats* StatsVector::at(const std::string& path) const {
  for (const auto& n : nodes)
    if (n.path == path) return &n;
  return nullptr;
}

SampledFeatureStats feature_stats(const std::vector<std::vector<double>>& rows) {
  SampledFeatureStats s;
  s.rows = rows.size();
  if (rows.empty()) return s;
  const std::size_t width = rows.front().size();
  std::vector<char> col_nonzero(width, 0);
  std::size_t nnz = 0, total = 0, zero_rows = 0;
  for (const auto& r : rows) {
    bool any = false;
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (r[c] != 0.0) {
        ++nnz;
        any = true;
        if (c < width) col_nonzero[c] = 1;
      }
    }
    total += r.size();
    if (!any) ++zero_rows;
  }
  s.nnz_ratio = total ? static_cast<double>(nnz) / static_cast<double>(total) : 0.0;
  s.zero_rows = static_cast<double>(zero_rows) / static_cast<double>(rows.size());
  s.zero_cols = width ? static_cast<double>(std::count(col_nonzero.begin(), col_nonzero.end(), 0)) / static_cast<double>(width) : 0.0;
  return s;
}

StatsCollector::StatsCollector(const Catalog& catalog, const ModelStore& models, StatsConfig config)
    : catalog_(catalog), models_(models), config_(config), catalog_version_(catalog.version()) {}

void StatsCollector::check_version() {
  if (catalog_.version() == catalog_version_) return;
  catalog_version_ = catalog_.version();
  card_cache_.clear();
  sample_cache_.clear();
  collect_cache_.clear();
}

namespace {

/// Splits an inner-join condition into equi-key pairs (left expr, right expr) and a residual.
struct JoinKeys {
  std::vector<std::pair<ExprPtr, ExprPtr>> equi;
  std::vector<ExprPtr> residual;
};

JoinKeys split_join_condition(const PlanNode& join) {
  JoinKeys k;
  const auto* op = join.as<JoinOp>();
  if (!op->condition) return k;
  const Schema& ls = join.child(0)->schema();
  const Schema& rs = join.child(1)->schema();
  auto within = [](const std::vector<std::string>& cols, const Schema& s) {
    return !cols.empty() && std::all_of(cols.begin(), cols.end(), [&](const auto& n) { return s.contains(n); });
  };
  for (const auto& c : conjuncts(op->condition)) {
    auto* cmp = c->as<Compare>();
    if (cmp && cmp->op == CompareOp::Eq) {
      const auto l = free_columns(*c->arg(0)), r = free_columns(*c->arg(1));
      if (within(l, ls) && within(r, rs)) {
        k.equi.emplace_back(c->arg(0), c->arg(1));
        continue;
      }
      if (within(r, ls) && within(l, rs)) {
        k.equi.emplace_back(c->arg(1), c->arg(0));
        continue;
      }
    }
    k.residual.push_back(c);
  }
  return k;
}

}  // namespace

double StatsCollector::cardinality(const PlanPtr& node) {
  std::lock_guard lock(mu_);
  check_version();
  if (auto it = card_cache_.find(node->hash()); it != card_cache_.end()) {
    ++cache_hits_;
    return it->second;
  }
  ++cache_misses_;
  double card = 0.0;
  switch (node->kind()) {
    case NodeKind::Scan: card = static_cast<double>(catalog_.get(node->as<ScanOp>()->table).rows()); break;
    case NodeKind::Filter:
      card = std::round(cardinality(node->child(0)) * predicate_selectivity(*node->as<FilterOp>()->predicate));
      break;
    case NodeKind::Project: card = cardinality(node->child(0)); break;
    case NodeKind::Join: {
      const double l = cardinality(node->child(0)), r = cardinality(node->child(1));
      card = l * r;
      if (node->as<JoinOp>()->type == JoinType::Inner) {
        const auto keys = split_join_condition(*node);
        for (const auto& [le, re] : keys.equi) {
          const double d = std::max({distinct_values(node->child(0), *le), distinct_values(node->child(1), *re), 1.0});
          card /= d;
        }
        for (const auto& c : keys.residual) card *= predicate_selectivity(*c);
        card = std::round(card);
      }
      break;
    }
    case NodeKind::Aggregate: {
      const auto* op = node->as<AggregateOp>();
      if (op->keys.empty()) {
        card = 1.0;
      } else {
        const double child = cardinality(node->child(0));
        double groups = 1.0;
        for (const auto& k : op->keys) groups *= std::max(1.0, distinct_values(node->child(0), *k.expr));
        card = std::min(child, groups);
      }
      break;
    }
    case NodeKind::Limit:
      card = std::min(static_cast<double>(node->as<LimitOp>()->n), cardinality(node->child(0)));
      break;
    case NodeKind::Sample:
      card = std::min(static_cast<double>(node->as<SampleOp>()->n), cardinality(node->child(0)));
      break;
  }
  card_cache_.emplace(node->hash(), card);
  return card;
}

double StatsCollector::distinct_values(const PlanPtr& node, const Expr& e) {
  const double card = cardinality(node);
  if (e.is<Literal>()) return std::min(1.0, card);
  auto* ref = e.as<ColumnRef>();
  if (!ref) return card;
  double d = card;
  switch (node->kind()) {
    case NodeKind::Scan: {
      const auto& table = node->as<ScanOp>()->table;
      if (catalog_.contains(table)) d = catalog_.ndv(table, ref->name);
      break;
    }
    case NodeKind::Filter:
    case NodeKind::Limit:
    case NodeKind::Sample: d = distinct_values(node->child(0), e); break;
    case NodeKind::Project:
      for (const auto& it : node->as<ProjectOp>()->items)
        if (it.name == ref->name) d = distinct_values(node->child(0), *it.expr);
      break;
    case NodeKind::Join:
      for (const auto& c : node->children())
        if (c->schema().contains(ref->name)) d = distinct_values(c, e);
      break;
    case NodeKind::Aggregate:
      for (const auto& k : node->as<AggregateOp>()->keys)
        if (k.name == ref->name) d = distinct_values(node->child(0), *k.expr);
      break;
  }
  return std::min(d, card);
}

StatMap StatsCollector::node_entries(const PlanPtr& node) {
  StatMap m;
  m["est_cardinality"] = {cardinality(node), StatSource::Estimated};
  if (node->kind() == NodeKind::Filter)
    m["est_selectivity"] = {predicate_selectivity(*node->as<FilterOp>()->predicate), StatSource::Estimated};
  if (node->kind() == NodeKind::Join) {
    const double in = cardinality(node->child(0)) * cardinality(node->child(1));
    m["join_ratio"] = {in > 0 ? std::min(1.0, cardinality(node) / in) : 0.0, StatSource::Estimated};
  }
  return m;
}

double StatsCollector::input_rows(const PlanPtr& owner) {
  switch (owner->kind()) {
    case NodeKind::Scan: return 0.0;
    case NodeKind::Join: return cardinality(owner->child(0)) * cardinality(owner->child(1));
    default: return cardinality(owner->child(0));
  }
}

StatMap StatsCollector::ml_static_entries(const PlanPtr& owner, const ExprPtr& call) {
  const auto* c = call->as<MLCall>();
  if (!c) fail(ErrorCode::ValidationError, "not an ML call: " + call->to_string());
  const Schema in = owner->input_schema();
  std::vector<DType> arg_types;
  for (const auto& a : call->args()) arg_types.push_back(type_of(*a, in));
  const ShapeInfo shape = get_shape(c->fn, c->attrs, models_, arg_types);
  StatMap m;
  m["input_rows"] = {input_rows(owner), StatSource::Estimated};
  m["flops"] = {shape.flops, StatSource::Metadata};
  m["num_parameters"] = {shape.num_parameters, StatSource::Metadata};
  if (shape.forest_num_trees) m["forest_num_trees"] = {static_cast<double>(*shape.forest_num_trees), StatSource::Metadata};
  return m;
}

namespace {

void flatten_into(const Value& v, std::vector<double>& out) {
  switch (v.kind()) {
    case TypeKind::Vector: out.insert(out.end(), v.vec().begin(), v.vec().end()); break;
    case TypeKind::Matrix: out.insert(out.end(), v.mat().data.begin(), v.mat().data.end()); break;
    case TypeKind::Int64:
    case TypeKind::Float64:
    case TypeKind::Bool: out.push_back(v.as_double()); break;
    case TypeKind::String: fail(ErrorCode::NonNumericFeature, "feature input is a string");
  }
}

}  // namespace

SampledFeatureStats StatsCollector::sample_ml_stats(const PlanPtr& owner, const ExprPtr& call) {
  if (call->args().empty()) fail(ErrorCode::NonNumericFeature, "call has no feature input: " + call->to_string());
  std::lock_guard lock(mu_);
  check_version();
  std::uint64_t input_hash = 0;
  for (const auto& c : owner->children()) input_hash = hash_combine(input_hash, c->hash());
  const auto key = std::pair{input_hash, call->hash()};
  if (auto it = sample_cache_.find(key); it != sample_cache_.end()) {
    ++cache_hits_;
    return it->second;
  }
  ++cache_misses_;
  if (owner->children().empty()) fail(ErrorCode::EmptySample, "scan nodes carry no expressions");
  const auto n = static_cast<std::int64_t>(config_.sample_size);
  PlanPtr input = owner->kind() == NodeKind::Join
                      ? cross_join(sample(owner->child(0), n, config_.seed), sample(owner->child(1), n, config_.seed + 1))
                      : owner->child(0);
  PlanPtr probe = project(sample(input, n, config_.seed), {{call->arg(0), "__feature"}});
  const ResultSet rs = execute(probe, catalog_, models_, ExecConfig{1024, true, config_.seed});
  if (rs.row_count == 0) fail(ErrorCode::EmptySample, "no rows reachable for " + call->to_string());
  std::vector<std::vector<double>> rows(rs.row_count);
  for (std::size_t r = 0; r < rs.row_count; ++r) flatten_into(rs.at(r, 0), rows[r]);
  const SampledFeatureStats s = feature_stats(rows);
  sample_cache_.emplace(key, s);
  return s;
}

StatMap StatsCollector::ml_entries(const PlanPtr& owner, const ExprPtr& call) {
  StatMap m = ml_static_entries(owner, call);
  if (!config_.sampling) return m;
  try {
    const auto s = sample_ml_stats(owner, call);
    m["nnz_ratio"] = {s.nnz_ratio, StatSource::Sampled};
    m["sparsity"] = {1.0 - s.nnz_ratio, StatSource::Sampled};
    m["zero_rows"] = {s.zero_rows, StatSource::Sampled};
    m["zero_cols"] = {s.zero_cols, StatSource::Sampled};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptySample && e.code() != ErrorCode::NonNumericFeature) throw;
  }
  return m;
}

StatsVector StatsCollector::collect(const PlanPtr& root) {
  std::lock_guard lock(mu_);
  check_version();
  if (auto it = collect_cache_.find(root->hash()); it != collect_cache_.end()) {
    ++cache_hits_;
    return it->second;
  }
  ++cache_misses_;
  StatsVector sv;
  sv.sample_size = config_.sample_size;
  sv.seed = config_.seed;
  visit_preorder(root, [&](const PlanPtr& node, const std::string& path) {
    NodeStats ns{path, node->kind(), node->hash(), node_entries(node), {}};
    const auto exprs = node->expressions();
    for (std::size_t i = 0; i < exprs.size(); ++i)
      visit_ml_calls(exprs[i], "e" + std::to_string(i), [&](const ExprPtr& call, const std::string& ep) {
        ns.ml_calls.push_back({ep, call, ml_entries(node, call)});
      });
    sv.nodes.push_back(std::move(ns));
  });
  collect_cache_.emplace(root->hash(), sv);
  return sv;
}

json stat_map_to_json(const StatMap& m) {
  json j = json::object();
  for (const auto& [name, e] : m) j[name] = {{"value", e.value}, {"source", std::string(stat_source_name(e.source))}};
  return j;
}

json stats_to_json(const StatsVector& s) {
  json nodes = json::array();
  for (const auto& n : s.nodes) {
    json calls = json::array();
    for (const auto& c : n.ml_calls)
      calls.push_back({{"expr_path", c.expr_path},
                       {"function", std::string(ml_function_name(c.call->as<MLCall>()->fn))},
                       {"stats", stat_map_to_json(c.entries)}});
    nodes.push_back({{"path", n.path},
                     {"kind", std::string(node_kind_name(n.kind))},
                     {"hash", hex64(n.hash)},
                     {"stats", stat_map_to_json(n.entries)},
                     {"ml_calls", std::move(calls)}});
  }
  return {{"sample_size", s.sample_size}, {"seed", s.seed}, {"nodes", std::move(nodes)}};
}

}  // namespace optbench
