// Actions that move computation below joins.

#include <algorithm>

#include "action_util.hpp"

namespace optbench {

namespace {

struct Pushed {
  ExprPtr expr;
  int side;  // 0 = left join input, 1 = right
  std::string name;
};

/// Extends each join input with its pushed expressions.
PlanPtr extend_join_inputs(const PlanPtr& join_node, const std::vector<Pushed>& pushed) {
  std::vector<PlanPtr> kids = join_node->children();
  for (int side = 0; side < 2; ++side) {
    std::vector<NamedExpr> extra;
    for (const auto& p : pushed)
      if (p.side == side) extra.push_back({p.expr, p.name});
    if (!extra.empty()) kids[static_cast<std::size_t>(side)] = extend(kids[static_cast<std::size_t>(side)], std::move(extra));
  }
  return join_node->with_children(std::move(kids));
}

void name_pushed(std::vector<Pushed>& pushed, const PlanNode& join_node) {
  std::vector<std::string> reserved;
  const Schema& l = join_node.child(0)->schema();
  const Schema& r = join_node.child(1)->schema();
  for (auto& p : pushed) {
    p.name = detail::fresh_name("__ml", p.expr->hash(), {&l, &r}, reserved);
    reserved.push_back(p.name);
  }
}

void add_unique(std::vector<Pushed>& out, Pushed p) {
  for (const auto& q : out)
    if (q.expr->hash() == p.expr->hash() && structurally_equal(*q.expr, *p.expr)) return;
  out.push_back(std::move(p));
}

/// Node with every pushed expression replaced by a reference to its column.
PlanPtr substitute(const PlanPtr& node, PlanPtr new_child, const std::vector<Pushed>& pushed) {
  auto exprs = node->expressions();
  for (auto& e : exprs)
    for (const auto& p : pushed) e = detail::replace_subexpr(e, *p.expr, col(p.name));
  PlanPtr n = node->with_children({std::move(new_child)});
  return n->with_expressions(std::move(exprs));
}

/// Splits compound ML expressions above a join and evaluates every maximal
/// deterministic ML subexpression whose inputs come from one join side in a
/// Project directly above that side.
class MLDecompositionPushdown final : public ActionTemplate<MLDecompositionPushdown> {
 public:
  using ActionTemplate::ActionTemplate;
  std::string_view template_id() const override { return "MLDecompositionPushdown"; }
  std::string_view summary() const override {
    return "Push one-sided ML subexpressions below the join that feeds them.";
  }

  bool matches_plan(const PlanPtr& node, RewriteContext&) const override { return !pushable(*node).empty(); }

  PlanPtr rewrite_plan(const PlanPtr& node, RewriteContext&) const override {
    auto pushed = pushable(*node);
    const auto fj = detail::filtered_join_below(*node);
    name_pushed(pushed, *fj->join);
    PlanPtr below = detail::rebuild_filters(fj->filters, extend_join_inputs(fj->join, pushed));
    PlanPtr out = substitute(node, below, pushed);
    if (node->kind() == NodeKind::Filter) {
      std::vector<std::string> names;
      for (const auto& c : node->schema().columns()) names.push_back(c.name);
      out = keep_columns(out, names);
    }
    return out;
  }

 private:
  static void collect(const ExprPtr& e, const Schema& l, const Schema& r, std::vector<Pushed>& out) {
    if (e->is<MLCall>() && is_deterministic(*e)) {
      if (detail::columns_within(*e, l)) return add_unique(out, {e, 0, {}});
      if (detail::columns_within(*e, r)) return add_unique(out, {e, 1, {}});
    }
    for (const auto& a : e->args()) collect(a, l, r, out);
  }

  static std::vector<Pushed> pushable(const PlanNode& node) {
    std::vector<Pushed> out;
    if (node.kind() != NodeKind::Project && node.kind() != NodeKind::Filter) return out;
    const auto fj = detail::filtered_join_below(node);
    if (!fj) return out;
    for (const auto& e : node.expressions()) collect(e, fj->join->child(0)->schema(), fj->join->child(1)->schema(), out);
    return out;
  }
};

/// matmul(concat(x1..xn)) above a join whose operands split by join side:
/// each contiguous one-sided run becomes a partial product against its row
/// slice of W, computed below the join; the partials are summed above it.
class MLFactorization final : public ActionTemplate<MLFactorization> {
 public:
  using ActionTemplate::ActionTemplate;
  std::string_view template_id() const override { return "MLFactorization"; }
  std::string_view summary() const override {
    return "Split XW over join sides into per-side partial products computed before the join.";
  }

  bool matches_plan(const PlanPtr& node, RewriteContext& ctx) const override { return target(*node, ctx) != nullptr; }

  PlanPtr rewrite_plan(const PlanPtr& node, RewriteContext& ctx) const override {
    const ExprPtr call = target(*node, ctx);
    const auto fj = detail::filtered_join_below(*node);
    const Schema& l = fj->join->child(0)->schema();
    const Schema in = node->input_schema();
    const auto* mc = call->as<MLCall>();
    const ExprPtr& cat = call->arg(0);

    struct Run {
      int side;
      std::vector<ExprPtr> args;
      int begin, end;
    };
    std::vector<Run> runs;
    int offset = 0;
    for (const auto& a : cat->args()) {
      const int side = detail::columns_within(*a, l) ? 0 : 1;
      const int width = type_of(*a, in).element_count();
      if (runs.empty() || runs.back().side != side) runs.push_back({side, {}, offset, offset});
      runs.back().args.push_back(a);
      runs.back().end = offset + width;
      offset += width;
    }

    std::vector<Pushed> pushed;
    for (const auto& run : runs) {
      ExprPtr input = run.args.size() == 1 && type_of(*run.args[0], in).kind == TypeKind::Vector ? run.args[0]
                                                                                                 : func("concat", run.args);
      MLAttrs a = mc->attrs;
      a.weight_rows = std::pair{run.begin, run.end};
      pushed.push_back({ml(MLFunctionId::MatrixMultiply, {input}, std::move(a)), run.side, {}});
    }
    name_pushed(pushed, *fj->join);
    ExprPtr combined = col(pushed.front().name);
    for (std::size_t i = 1; i < pushed.size(); ++i)
      combined = ml(MLFunctionId::MatrixAddition, {combined, col(pushed[i].name)});

    PlanPtr below = detail::rebuild_filters(fj->filters, extend_join_inputs(fj->join, pushed));
    auto exprs = node->expressions();
    for (auto& e : exprs) e = detail::replace_subexpr(e, *call, combined);
    return node->with_children({below})->with_expressions(std::move(exprs));
  }

 private:
  ExprPtr target(const PlanNode& node, RewriteContext& ctx) const {
    if (node.kind() != NodeKind::Project) return nullptr;
    const auto fj = detail::filtered_join_below(node);
    if (!fj) return nullptr;
    const Schema& l = fj->join->child(0)->schema();
    const Schema& r = fj->join->child(1)->schema();
    for (const auto& e : node.expressions()) {
      auto found = detail::find_call(e, [&](const ExprPtr& x) {
        const auto* c = x->as<MLCall>();
        if (c->fn != MLFunctionId::MatrixMultiply || c->attrs.weight_rows || !c->attrs.model_id || !c->attrs.weight_shape)
          return false;
        if (!ctx.models.contains(*c->attrs.model_id) || !std::holds_alternative<DenseMatrix>(ctx.models.get(*c->attrs.model_id)))
          return false;
        const ExprPtr& cat = x->arg(0);
        if (!cat->is_func("concat") || cat->args().size() < 2) return false;
        bool left = false, right = false;
        for (const auto& a : cat->args()) {
          if (!is_deterministic(*a)) return false;
          if (detail::columns_within(*a, l)) left = true;
          else if (detail::columns_within(*a, r)) right = true;
          else return false;
        }
        return left && right;
      });
      if (found) return found;
    }
    return nullptr;
  }
};

/// Classical relational pushdown: moves ML-free conjuncts of a Filter above a
/// join into the join input they reference, and two-sided ones into the join
/// condition.
class FilterPushdown final : public ActionTemplate<FilterPushdown> {
 public:
  using ActionTemplate::ActionTemplate;
  std::string_view template_id() const override { return "FilterPushdown"; }
  std::string_view summary() const override { return "Push relational filter conjuncts below joins."; }

  bool matches_plan(const PlanPtr& node, RewriteContext&) const override {
    const auto s = split(*node);
    return s && (!s->left.empty() || !s->right.empty() || !s->join.empty());
  }

  PlanPtr rewrite_plan(const PlanPtr& node, RewriteContext&) const override {
    const auto s = split(*node);
    const PlanPtr& j = node->child(0);
    PlanPtr l = s->left.empty() ? j->child(0) : filter(j->child(0), conj(s->left));
    PlanPtr r = s->right.empty() ? j->child(1) : filter(j->child(1), conj(s->right));
    std::vector<ExprPtr> cond;
    if (const auto& c = j->as<JoinOp>()->condition) cond = conjuncts(c);
    cond.insert(cond.end(), s->join.begin(), s->join.end());
    PlanPtr nj = cond.empty() ? cross_join(l, r) : join(l, r, conj(cond));
    return s->keep.empty() ? nj : filter(nj, conj(s->keep));
  }

 private:
  struct Split {
    std::vector<ExprPtr> left, right, join, keep;
  };

  static std::optional<Split> split(const PlanNode& node) {
    if (node.kind() != NodeKind::Filter || node.child(0)->kind() != NodeKind::Join) return std::nullopt;
    const Schema& l = node.child(0)->child(0)->schema();
    const Schema& r = node.child(0)->child(1)->schema();
    Split s;
    for (const auto& c : conjuncts(node.as<FilterOp>()->predicate)) {
      if (contains_ml(*c) || !is_deterministic(*c) || free_columns(*c).empty()) s.keep.push_back(c);
      else if (detail::columns_within(*c, l)) s.left.push_back(c);
      else if (detail::columns_within(*c, r)) s.right.push_back(c);
      else s.join.push_back(c);
    }
    return s;
  }
};

}  // namespace

ActionPtr make_ml_decomposition_pushdown() {
  return std::make_shared<MLDecompositionPushdown>("MLDecompositionPushdown", ActionParams{});
}
ActionPtr make_ml_factorization() { return std::make_shared<MLFactorization>("MLFactorization", ActionParams{}); }
ActionPtr make_filter_pushdown() { return std::make_shared<FilterPushdown>("FilterPushdown", ActionParams{}); }

}  // namespace optbench
