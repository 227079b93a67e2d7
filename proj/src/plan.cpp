#include "optbench/plan.hpp"

#include <sstream>

namespace optbench {

using nlohmann::json;

std::string_view node_kind_name(NodeKind k) {
  static constexpr std::string_view names[] = {"scan", "filter", "project", "join", "aggregate", "limit", "sample"};
  return names[static_cast<int>(k)];
}

std::string_view agg_fn_name(AggFn f) {
  static constexpr std::string_view names[] = {"sum", "count", "avg", "min", "max", "majority_vote"};
  return names[static_cast<int>(f)];
}

AggFn agg_fn_from_name(std::string_view name) {
  for (int i = 0; i < 6; ++i)
    if (agg_fn_name(static_cast<AggFn>(i)) == name) return static_cast<AggFn>(i);
  fail(ErrorCode::ParseError, "unknown aggregate function '" + std::string(name) + "'");
}

namespace {

void expect_children(NodeKind k, std::size_t n, std::size_t want) {
  if (n != want)
    fail(ErrorCode::ValidationError, std::string(node_kind_name(k)) + " takes " + std::to_string(want) +
                                         " children, got " + std::to_string(n));
}

void expect_bool(const Expr& e, const Schema& in, std::string_view where) {
  const DType t = type_of(e, in);
  if (t.kind != TypeKind::Bool)
    fail(ErrorCode::TypeMismatch, std::string(where) + " must be bool, got " + t.to_string() + ": " + e.to_string());
}

DType aggregate_type(const AggregateItem& a, const Schema& in) {
  if (a.fn == AggFn::Count) return DType::int64();
  if (!a.arg) fail(ErrorCode::ValidationError, std::string(agg_fn_name(a.fn)) + " needs an argument");
  const DType t = type_of(*a.arg, in);
  auto bad = [&]() -> DType {
    fail(ErrorCode::TypeMismatch, std::string(agg_fn_name(a.fn)) + " over " + t.to_string() + " in " + a.name);
  };
  switch (a.fn) {
    case AggFn::Sum:
      if (t.kind == TypeKind::Int64 || t.kind == TypeKind::Bool) return DType::int64();
      if (t.kind == TypeKind::Float64 || t.kind == TypeKind::Vector) return t;
      return bad();
    case AggFn::Avg:
      if (t.is_numeric_scalar() || t.kind == TypeKind::Bool) return DType::float64();
      if (t.kind == TypeKind::Vector) return t;
      return bad();
    case AggFn::Min:
    case AggFn::Max:
      if (t.is_numeric_scalar() || t.kind == TypeKind::String) return t;
      return bad();
    case AggFn::MajorityVote:
      if (t.is_tensor()) return bad();
      return t;
    case AggFn::Count: break;
  }
  return bad();
}

}  // namespace

Schema derive_schema(const PlanNode::Op& op, std::span<const PlanPtr> ch) {
  const auto kind = static_cast<NodeKind>(op.index());
  for (const auto& c : ch)
    if (!c) fail(ErrorCode::ValidationError, "null child plan");
  return std::visit(
      [&](const auto& o) -> Schema {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, ScanOp>) {
          expect_children(kind, ch.size(), 0);
          if (o.table.empty()) fail(ErrorCode::ValidationError, "scan without a table name");
          return o.schema;
        } else if constexpr (std::is_same_v<T, FilterOp>) {
          expect_children(kind, ch.size(), 1);
          if (!o.predicate) fail(ErrorCode::ValidationError, "filter without predicate");
          expect_bool(*o.predicate, ch[0]->schema(), "filter predicate");
          return ch[0]->schema();
        } else if constexpr (std::is_same_v<T, ProjectOp>) {
          expect_children(kind, ch.size(), 1);
          if (o.items.empty()) fail(ErrorCode::ValidationError, "project without items");
          std::vector<Column> cols;
          for (const auto& it : o.items) {
            if (!it.expr || it.name.empty()) fail(ErrorCode::ValidationError, "project item needs an expression and a name");
            cols.push_back({it.name, type_of(*it.expr, ch[0]->schema())});
          }
          return Schema(std::move(cols));
        } else if constexpr (std::is_same_v<T, JoinOp>) {
          expect_children(kind, ch.size(), 2);
          Schema out = ch[0]->schema().concat(ch[1]->schema());
          if (o.type == JoinType::Inner) {
            if (!o.condition) fail(ErrorCode::ValidationError, "inner join without condition");
            expect_bool(*o.condition, out, "join condition");
          } else if (o.condition) {
            fail(ErrorCode::ValidationError, "cross join with a condition");
          }
          return out;
        } else if constexpr (std::is_same_v<T, AggregateOp>) {
          expect_children(kind, ch.size(), 1);
          std::vector<Column> cols;
          const Schema& in = ch[0]->schema();
          for (const auto& k : o.keys) {
            if (!k.expr || k.name.empty()) fail(ErrorCode::ValidationError, "group key needs an expression and a name");
            const DType t = type_of(*k.expr, in);
            if (t.is_tensor()) fail(ErrorCode::TypeMismatch, "group key '" + k.name + "' is a tensor");
            cols.push_back({k.name, t});
          }
          for (const auto& a : o.aggregates) {
            if (a.name.empty()) fail(ErrorCode::ValidationError, "aggregate without output name");
            cols.push_back({a.name, aggregate_type(a, in)});
          }
          if (cols.empty()) fail(ErrorCode::ValidationError, "aggregate without outputs");
          return Schema(std::move(cols));
        } else if constexpr (std::is_same_v<T, LimitOp>) {
          expect_children(kind, ch.size(), 1);
          if (o.n < 0) fail(ErrorCode::ValidationError, "negative limit");
          return ch[0]->schema();
        } else {
          expect_children(kind, ch.size(), 1);
          if (o.n <= 0) fail(ErrorCode::ValidationError, "sample size must be positive");
          return ch[0]->schema();
        }
      },
      op);
}

PlanNode::PlanNode(Op op, std::vector<PlanPtr> children) : op_(std::move(op)), children_(std::move(children)) {
  schema_ = derive_schema(op_, children_);
  std::uint64_t h = stable_hash(local_json().dump());
  for (const auto& c : children_) h = hash_combine(h, c->hash());
  hash_ = hash_combine(h, children_.size());
}

Schema PlanNode::input_schema() const {
  if (children_.empty()) return {};
  if (children_.size() == 1) return children_[0]->schema();
  return children_[0]->schema().concat(children_[1]->schema());
}

std::vector<ExprPtr> PlanNode::expressions() const {
  std::vector<ExprPtr> out;
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, FilterOp>) {
          out.push_back(o.predicate);
        } else if constexpr (std::is_same_v<T, ProjectOp>) {
          for (const auto& it : o.items) out.push_back(it.expr);
        } else if constexpr (std::is_same_v<T, JoinOp>) {
          if (o.condition) out.push_back(o.condition);
        } else if constexpr (std::is_same_v<T, AggregateOp>) {
          for (const auto& k : o.keys) out.push_back(k.expr);
          for (const auto& a : o.aggregates)
            if (a.arg) out.push_back(a.arg);
        }
      },
      op_);
  return out;
}

PlanPtr PlanNode::with_expressions(std::vector<ExprPtr> exprs) const {
  Op op = op_;
  std::size_t i = 0;
  auto next = [&]() -> ExprPtr {
    if (i >= exprs.size()) fail(ErrorCode::Internal, "too few expressions for " + label());
    return exprs[i++];
  };
  std::visit(
      [&](auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, FilterOp>) {
          o.predicate = next();
        } else if constexpr (std::is_same_v<T, ProjectOp>) {
          for (auto& it : o.items) it.expr = next();
        } else if constexpr (std::is_same_v<T, JoinOp>) {
          if (o.condition) o.condition = next();
        } else if constexpr (std::is_same_v<T, AggregateOp>) {
          for (auto& k : o.keys) k.expr = next();
          for (auto& a : o.aggregates)
            if (a.arg) a.arg = next();
        }
      },
      op);
  if (i != exprs.size()) fail(ErrorCode::Internal, "too many expressions for " + label());
  return std::make_shared<const PlanNode>(std::move(op), children_);
}

PlanPtr PlanNode::with_children(std::vector<PlanPtr> children) const {
  return std::make_shared<const PlanNode>(op_, std::move(children));
}

json PlanNode::local_json() const {
  json j{{"kind", std::string(node_kind_name(kind()))}};
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, ScanOp>) {
          j["table"] = o.table;
          json cols = json::array();
          for (const auto& c : o.schema.columns()) cols.push_back({{"name", c.name}, {"dtype", c.dtype.to_string()}});
          j["schema"] = std::move(cols);
        } else if constexpr (std::is_same_v<T, FilterOp>) {
          j["predicate"] = hex64(o.predicate->hash());
        } else if constexpr (std::is_same_v<T, ProjectOp>) {
          json items = json::array();
          for (const auto& it : o.items) items.push_back({it.name, hex64(it.expr->hash())});
          j["items"] = std::move(items);
        } else if constexpr (std::is_same_v<T, JoinOp>) {
          j["join_type"] = o.type == JoinType::Inner ? "inner" : "cross";
          j["condition"] = o.condition ? json(hex64(o.condition->hash())) : json(nullptr);
        } else if constexpr (std::is_same_v<T, AggregateOp>) {
          json keys = json::array();
          for (const auto& k : o.keys) keys.push_back({k.name, hex64(k.expr->hash())});
          json aggs = json::array();
          for (const auto& a : o.aggregates)
            aggs.push_back({std::string(agg_fn_name(a.fn)), a.arg ? json(hex64(a.arg->hash())) : json(nullptr), a.name});
          j["keys"] = std::move(keys);
          j["aggregates"] = std::move(aggs);
        } else if constexpr (std::is_same_v<T, LimitOp>) {
          j["n"] = o.n;
        } else {
          j["n"] = o.n;
          j["seed"] = o.seed;
        }
      },
      op_);
  return j;
}

std::string PlanNode::label() const {
  std::ostringstream os;
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, ScanOp>) {
          os << "Scan " << o.table;
        } else if constexpr (std::is_same_v<T, FilterOp>) {
          os << "Filter " << o.predicate->to_string();
        } else if constexpr (std::is_same_v<T, ProjectOp>) {
          os << "Project ";
          for (std::size_t i = 0; i < o.items.size(); ++i)
            os << (i ? ", " : "") << o.items[i].expr->to_string() << " AS " << o.items[i].name;
        } else if constexpr (std::is_same_v<T, JoinOp>) {
          os << (o.type == JoinType::Inner ? "Join ON " + o.condition->to_string() : std::string("CrossJoin"));
        } else if constexpr (std::is_same_v<T, AggregateOp>) {
          os << "Aggregate";
          for (std::size_t i = 0; i < o.keys.size(); ++i) os << (i ? ", " : " BY ") << o.keys[i].name;
          os << " :";
          for (const auto& a : o.aggregates)
            os << " " << agg_fn_name(a.fn) << "(" << (a.arg ? a.arg->to_string() : "*") << ") AS " << a.name;
        } else if constexpr (std::is_same_v<T, LimitOp>) {
          os << "Limit " << o.n;
        } else {
          os << "Sample " << o.n << " seed=" << o.seed;
        }
      },
      op_);
  return os.str();
}

std::uint64_t canonical_hash(const PlanNode& node) { return node.hash(); }

PlanPtr scan(std::string table, Schema schema) {
  return std::make_shared<const PlanNode>(ScanOp{std::move(table), std::move(schema)}, std::vector<PlanPtr>{});
}
PlanPtr filter(PlanPtr child, ExprPtr predicate) {
  return std::make_shared<const PlanNode>(FilterOp{std::move(predicate)}, std::vector<PlanPtr>{std::move(child)});
}
PlanPtr project(PlanPtr child, std::vector<NamedExpr> items) {
  return std::make_shared<const PlanNode>(ProjectOp{std::move(items)}, std::vector<PlanPtr>{std::move(child)});
}
PlanPtr join(PlanPtr left, PlanPtr right, ExprPtr condition) {
  return std::make_shared<const PlanNode>(JoinOp{JoinType::Inner, std::move(condition)},
                                          std::vector<PlanPtr>{std::move(left), std::move(right)});
}
PlanPtr cross_join(PlanPtr left, PlanPtr right) {
  return std::make_shared<const PlanNode>(JoinOp{JoinType::Cross, nullptr},
                                          std::vector<PlanPtr>{std::move(left), std::move(right)});
}
PlanPtr aggregate(PlanPtr child, std::vector<NamedExpr> keys, std::vector<AggregateItem> aggs) {
  return std::make_shared<const PlanNode>(AggregateOp{std::move(keys), std::move(aggs)},
                                          std::vector<PlanPtr>{std::move(child)});
}
PlanPtr limit(PlanPtr child, std::int64_t n) {
  return std::make_shared<const PlanNode>(LimitOp{n}, std::vector<PlanPtr>{std::move(child)});
}
PlanPtr sample(PlanPtr child, std::int64_t n, std::uint64_t seed) {
  return std::make_shared<const PlanNode>(SampleOp{n, seed}, std::vector<PlanPtr>{std::move(child)});
}

PlanPtr extend(PlanPtr child, std::vector<NamedExpr> extra) {
  std::vector<NamedExpr> items;
  for (const auto& c : child->schema().columns()) items.push_back({col(c.name), c.name});
  for (auto& e : extra) items.push_back(std::move(e));
  return project(std::move(child), std::move(items));
}

PlanPtr keep_columns(PlanPtr child, const std::vector<std::string>& columns) {
  std::vector<NamedExpr> items;
  for (const auto& c : columns) items.push_back({col(c), c});
  return project(std::move(child), std::move(items));
}

PlanPtr deep_copy(const PlanPtr& plan) {
  std::vector<PlanPtr> children;
  for (const auto& c : plan->children()) children.push_back(deep_copy(c));
  return std::make_shared<const PlanNode>(plan->op(), std::move(children));
}

bool structurally_equal(const PlanNode& a, const PlanNode& b) {
  if (a.kind() != b.kind() || a.children().size() != b.children().size()) return false;
  if (a.local_json() != b.local_json()) return false;
  const auto ea = a.expressions(), eb = b.expressions();
  if (ea.size() != eb.size()) return false;
  for (std::size_t i = 0; i < ea.size(); ++i)
    if (!structurally_equal(*ea[i], *eb[i])) return false;
  for (std::size_t i = 0; i < a.children().size(); ++i)
    if (!structurally_equal(*a.child(i), *b.child(i))) return false;
  return true;
}

std::string child_path(const std::string& parent, std::size_t i) { return parent + "." + std::to_string(i); }

namespace {

std::vector<std::size_t> parse_path(const std::string& path) {
  std::vector<std::size_t> steps;
  std::stringstream ss(path);
  std::string part;
  bool first = true;
  while (std::getline(ss, part, '.')) {
    if (first) {
      if (part != "0") fail(ErrorCode::ValidationError, "node path must start at 0: " + path);
      first = false;
      continue;
    }
    try {
      steps.push_back(std::stoul(part));
    } catch (const std::exception&) {
      fail(ErrorCode::ValidationError, "malformed node path: " + path);
    }
  }
  if (first) fail(ErrorCode::ValidationError, "empty node path");
  return steps;
}

PlanPtr replace_steps(const PlanPtr& node, std::span<const std::size_t> steps, PlanPtr replacement) {
  if (steps.empty()) return replacement;
  if (steps[0] >= node->children().size()) fail(ErrorCode::ValidationError, "node path out of range");
  auto children = node->children();
  children[steps[0]] = replace_steps(children[steps[0]], steps.subspan(1), std::move(replacement));
  return node->with_children(std::move(children));
}

void preorder(const PlanPtr& node, const std::string& path,
              const std::function<void(const PlanPtr&, const std::string&)>& fn) {
  fn(node, path);
  for (std::size_t i = 0; i < node->children().size(); ++i) preorder(node->child(i), child_path(path, i), fn);
}

}  // namespace

PlanPtr node_at(const PlanPtr& root, const std::string& path) {
  PlanPtr cur = root;
  for (auto s : parse_path(path)) {
    if (s >= cur->children().size()) fail(ErrorCode::ValidationError, "node path out of range: " + path);
    cur = cur->child(s);
  }
  return cur;
}

PlanPtr replace_at(const PlanPtr& root, const std::string& path, PlanPtr replacement) {
  const auto steps = parse_path(path);
  return replace_steps(root, steps, std::move(replacement));
}

void visit_preorder(const PlanPtr& root, const std::function<void(const PlanPtr&, const std::string&)>& fn) {
  preorder(root, "0", fn);
}

std::size_t node_count(const PlanNode& root) {
  std::size_t n = 1;
  for (const auto& c : root.children()) n += node_count(*c);
  return n;
}

std::vector<MLCallSite> ml_call_sites(const PlanPtr& root) {
  std::vector<MLCallSite> out;
  visit_preorder(root, [&](const PlanPtr& node, const std::string& path) {
    const auto exprs = node->expressions();
    for (std::size_t i = 0; i < exprs.size(); ++i)
      visit_ml_calls(exprs[i], "e" + std::to_string(i),
                     [&](const ExprPtr& call, const std::string& ep) { out.push_back({path, ep, node, call}); });
  });
  return out;
}

std::string unique_name(const std::string& name, const Schema& taken) {
  if (!taken.contains(name)) return name;
  for (int i = 2;; ++i) {
    std::string candidate = name + "_" + std::to_string(i);
    if (!taken.contains(candidate)) return candidate;
  }
}

namespace {

void render(const PlanNode& n, int depth, std::ostringstream& os) {
  os << std::string(static_cast<std::size_t>(depth) * 2, ' ') << n.label() << "\n";
  for (const auto& c : n.children()) render(*c, depth + 1, os);
}

}  // namespace

std::string plan_to_string(const PlanNode& root) {
  std::ostringstream os;
  render(root, 0, os);
  return os.str();
}

}  // namespace optbench
