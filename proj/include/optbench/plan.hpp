#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "optbench/expr.hpp"
#include "optbench/value.hpp"

namespace optbench {

enum class NodeKind { Scan, Filter, Project, Join, Aggregate, Limit, Sample };
enum class JoinType { Inner, Cross };
enum class AggFn { Sum, Count, Avg, Min, Max, MajorityVote };

std::string_view node_kind_name(NodeKind k);
std::string_view agg_fn_name(AggFn f);
AggFn agg_fn_from_name(std::string_view name);

struct NamedExpr {
  ExprPtr expr;
  std::string name;
};

/// `arg` is null only for count(*).
struct AggregateItem {
  AggFn fn;
  ExprPtr arg;
  std::string name;
};

struct ScanOp {
  std::string table;
  Schema schema;
};
struct FilterOp {
  ExprPtr predicate;
};
struct ProjectOp {
  std::vector<NamedExpr> items;
};
struct JoinOp {
  JoinType type = JoinType::Cross;
  ExprPtr condition;  // required for inner, absent for cross
};
struct AggregateOp {
  std::vector<NamedExpr> keys;
  std::vector<AggregateItem> aggregates;
};
struct LimitOp {
  std::int64_t n = 0;
};
struct SampleOp {
  std::int64_t n = 0;
  std::uint64_t seed = 0;
};

class PlanNode;
using PlanPtr = std::shared_ptr<const PlanNode>;

/// Immutable logical plan node. The output schema and the structural hash are
/// derived at construction, so an existing PlanNode is always well-formed.
class PlanNode {
 public:
  using Op = std::variant<ScanOp, FilterOp, ProjectOp, JoinOp, AggregateOp, LimitOp, SampleOp>;

  PlanNode(Op op, std::vector<PlanPtr> children);

  NodeKind kind() const { return static_cast<NodeKind>(op_.index()); }
  const Op& op() const { return op_; }
  const std::vector<PlanPtr>& children() const { return children_; }
  const PlanPtr& child(std::size_t i) const { return children_.at(i); }
  const Schema& schema() const { return schema_; }
  std::uint64_t hash() const { return hash_; }

  template <typename T>
  const T* as() const { return std::get_if<T>(&op_); }

  /// Schema the node's expressions are evaluated against.
  Schema input_schema() const;

  /// All expressions in a fixed order (predicate / items / condition / keys then aggregate args).
  std::vector<ExprPtr> expressions() const;
  /// Same operator with expressions replaced positionally; re-derives the schema.
  PlanPtr with_expressions(std::vector<ExprPtr> exprs) const;
  PlanPtr with_children(std::vector<PlanPtr> children) const;

  /// Canonical node-local description (no children); stable field order.
  nlohmann::json local_json() const;
  std::string label() const;

 private:
  Op op_;
  std::vector<PlanPtr> children_;
  Schema schema_;
  std::uint64_t hash_;
};

/// Output schema of an operator over already-built children. Throws
/// UnresolvedColumn, ArityMismatch, TypeMismatch or ValidationError.
Schema derive_schema(const PlanNode::Op& op, std::span<const PlanPtr> children);
inline Schema derive_schema(const PlanNode& node) { return derive_schema(node.op(), node.children()); }

std::uint64_t canonical_hash(const PlanNode& node);

// Builders.
PlanPtr scan(std::string table, Schema schema);
PlanPtr filter(PlanPtr child, ExprPtr predicate);
PlanPtr project(PlanPtr child, std::vector<NamedExpr> items);
PlanPtr join(PlanPtr left, PlanPtr right, ExprPtr condition);  // inner
PlanPtr cross_join(PlanPtr left, PlanPtr right);
PlanPtr aggregate(PlanPtr child, std::vector<NamedExpr> keys, std::vector<AggregateItem> aggs);
PlanPtr limit(PlanPtr child, std::int64_t n);
PlanPtr sample(PlanPtr child, std::int64_t n, std::uint64_t seed);

/// Project that keeps every column of `child` and appends `extra`.
PlanPtr extend(PlanPtr child, std::vector<NamedExpr> extra);
/// Project that passes `columns` through unchanged.
PlanPtr keep_columns(PlanPtr child, const std::vector<std::string>& columns);

/// Rebuilds every node; the result shares no nodes with the input.
PlanPtr deep_copy(const PlanPtr& plan);
bool structurally_equal(const PlanNode& a, const PlanNode& b);

/// Node paths: the root is "0"; child i of node "p" is "p.i".
std::string child_path(const std::string& parent, std::size_t i);
PlanPtr node_at(const PlanPtr& root, const std::string& path);
PlanPtr replace_at(const PlanPtr& root, const std::string& path, PlanPtr replacement);
void visit_preorder(const PlanPtr& root, const std::function<void(const PlanPtr&, const std::string&)>& fn);
std::size_t node_count(const PlanNode& root);

/// Every MLCall in the plan, with its owning node path and expression path
/// ("e<i>" for the i-th node expression, then ".a<j>" per operand).
struct MLCallSite {
  std::string node_path;
  std::string expr_path;
  PlanPtr owner;
  ExprPtr call;
};
std::vector<MLCallSite> ml_call_sites(const PlanPtr& root);

/// Returns `name` if it is free in `taken`, else `name_2`, `name_3`, ...
std::string unique_name(const std::string& name, const Schema& taken);

std::string plan_to_string(const PlanNode& root);

}  // namespace optbench
