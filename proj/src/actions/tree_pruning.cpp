// Removes tree branches that no row reaching the call can take, given range
// filters on the feature columns below it.

#include <cmath>
#include <limits>
#include <map>

#include "action_util.hpp"

namespace optbench {

namespace {

struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  bool lo_incl = false;
  double hi = std::numeric_limits<double>::infinity();
  bool hi_incl = false;

  void below(double v, bool incl) {
    if (v < hi) {
      hi = v;
      hi_incl = incl;
    } else if (v == hi) {
      hi_incl = hi_incl && incl;
    }
  }
  void above(double v, bool incl) {
    if (v > lo) {
      lo = v;
      lo_incl = incl;
    } else if (v == lo) {
      lo_incl = lo_incl && incl;
    }
  }
};

using Bounds = std::map<std::string, Interval>;

void add_bound(const ExprPtr& c, Bounds& b) {
  const auto* cmpop = c->as<Compare>();
  if (!cmpop) return;
  CompareOp op = cmpop->op;
  const Expr* column = c->arg(0).get();
  const Expr* value = c->arg(1).get();
  if (!column->is<ColumnRef>()) {
    std::swap(column, value);
    op = flip(op);
  }
  const auto* ref = column->as<ColumnRef>();
  const auto* lit = value->as<Literal>();
  if (!ref || !lit || !lit->value.is_numeric()) return;
  const double v = lit->value.as_double();
  Interval& iv = b[ref->name];
  switch (op) {
    case CompareOp::Lt: iv.below(v, false); break;
    case CompareOp::Le: iv.below(v, true); break;
    case CompareOp::Gt: iv.above(v, false); break;
    case CompareOp::Ge: iv.above(v, true); break;
    case CompareOp::Eq:
      iv.below(v, true);
      iv.above(v, true);
      break;
    case CompareOp::Ne: break;
  }
}

/// Range filters every row flowing out of `node` satisfies. Column names are
/// stable through filters, joins, samples and limits; a Project or Aggregate
/// may rebind them, so the search stops there.
void collect_bounds(const PlanPtr& node, Bounds& b) {
  switch (node->kind()) {
    case NodeKind::Filter:
      for (const auto& c : conjuncts(node->as<FilterOp>()->predicate)) add_bound(c, b);
      collect_bounds(node->child(0), b);
      break;
    case NodeKind::Join:
      collect_bounds(node->child(0), b);
      collect_bounds(node->child(1), b);
      break;
    case NodeKind::Sample:
    case NodeKind::Limit: collect_bounds(node->child(0), b); break;
    default: break;
  }
}

int prune(const DecisionTree& t, int i, std::vector<Interval>& iv, std::vector<TreeNode>& out) {
  const TreeNode& n = t.nodes[static_cast<std::size_t>(i)];
  const auto f = static_cast<std::size_t>(n.feature);
  const bool bounded = !n.is_leaf() && f < iv.size();
  if (bounded) {
    if (iv[f].hi <= n.threshold) return prune(t, n.left, iv, out);
    if (iv[f].lo > n.threshold || (iv[f].lo == n.threshold && !iv[f].lo_incl)) return prune(t, n.right, iv, out);
  }
  const int idx = static_cast<int>(out.size());
  out.push_back(n);
  if (n.is_leaf()) return idx;
  const Interval saved = bounded ? iv[f] : Interval{};
  if (bounded) iv[f].below(n.threshold, true);
  const int l = prune(t, n.left, iv, out);
  if (bounded) {
    iv[f] = saved;
    iv[f].above(n.threshold, false);
  }
  const int r = prune(t, n.right, iv, out);
  if (bounded) iv[f] = saved;
  out[static_cast<std::size_t>(idx)].left = l;
  out[static_cast<std::size_t>(idx)].right = r;
  return idx;
}

class TreeModelPruning final : public ActionTemplate<TreeModelPruning> {
 public:
  using ActionTemplate::ActionTemplate;
  std::string_view template_id() const override { return "TreeModelPruning"; }
  std::string_view summary() const override {
    return "Drop tree branches that the query's range filters make unreachable.";
  }

  ExprRewrite rewrite_expr(const ExprPtr& e, const PlanPtr& owner, RewriteContext&) const override {
    if (!contains_ml(*e)) return {false, e};
    Bounds bounds;
    for (const auto& c : owner->children()) collect_bounds(c, bounds);
    if (bounds.empty()) return {false, e};
    const Schema in = owner->input_schema();
    bool modified = false;
    ExprPtr out = detail::transform_bottom_up(e, [&](const ExprPtr& orig, const ExprPtr& rebuilt) -> ExprPtr {
      const auto* c = orig->as<MLCall>();
      if (!c || (c->fn != MLFunctionId::DecisionTree && c->fn != MLFunctionId::DecisionForest) || !c->attrs.tree_spec)
        return nullptr;
      const ExprPtr& features = orig->arg(0);
      if (!features->is_func("concat")) return nullptr;
      std::vector<Interval> iv;
      bool any = false;
      for (const auto& a : features->args()) {
        const auto* ref = a->as<ColumnRef>();
        if (!ref || !type_of(*a, in).is_numeric_scalar()) return nullptr;
        auto it = bounds.find(ref->name);
        iv.push_back(it == bounds.end() ? Interval{} : it->second);
        any = any || it != bounds.end();
      }
      if (!any) return nullptr;
      const TreeEnsemble& spec = *c->attrs.tree_spec;
      auto pruned = std::make_shared<TreeEnsemble>(spec);
      for (auto& t : pruned->trees) {
        if (t.nodes.empty()) continue;
        std::vector<TreeNode> nodes;
        std::vector<Interval> scratch = iv;
        prune(t, 0, scratch, nodes);
        t.nodes = std::move(nodes);
      }
      if (pruned->node_count() >= spec.node_count()) return nullptr;
      MLAttrs a = c->attrs;
      a.tree_spec = std::move(pruned);
      modified = true;
      return detail::ml_with_attrs(orig, std::move(a), rebuilt->args());
    });
    return {modified, out};
  }
};

}  // namespace

/// Prunes one tree against per-feature intervals; exposed for tests.
DecisionTree prune_tree(const DecisionTree& t, const std::vector<std::pair<double, double>>& closed_bounds) {
  std::vector<Interval> iv;
  for (const auto& [lo, hi] : closed_bounds) iv.push_back({lo, true, hi, true});
  DecisionTree out;
  if (!t.nodes.empty()) prune(t, 0, iv, out.nodes);
  return out;
}

ActionPtr make_tree_model_pruning() { return std::make_shared<TreeModelPruning>("TreeModelPruning", ActionParams{}); }

}  // namespace optbench
