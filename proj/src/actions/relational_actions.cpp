// Actions that re-express model inference as joins and aggregation over
// materialized model relations.

#include "action_util.hpp"

namespace optbench {

namespace {

std::string model_table_name(const std::string& id) { return std::string(kModelTablePrefix) + id; }

/// Shared shape of both relationalizations. For a Project over C whose item
/// contains `call(x)`:
///   C1     = extend(C, rid := row_id(), xv := x)
///   pairs  = Project(rid, xv)(C1) x Project(renamed)(Scan model relation)
///   terms  = Project(rid2 := rid, term := per_pair)(pairs)
///   scores = Aggregate(fn(term) by rid2)(terms)
///   result = Project(items with call -> y)(C1 join scores on rid = rid2)
struct Relationalized {
  PlanPtr c1;
  PlanPtr pairs;
  std::string rid, xv, rid2, term, y;
  std::vector<std::string> renamed;  // model relation columns after renaming
};

Relationalized start(const PlanPtr& node, const ExprPtr& call, const Table& model_rel) {
  Relationalized r;
  const PlanPtr& child = node->child(0);
  const std::uint64_t seed = hash_combine(node->hash(), call->hash());
  const Schema& s = child->schema();
  r.rid = detail::fresh_name("__rid", seed, s);
  r.xv = detail::fresh_name("__xv", seed, {&s}, {r.rid});
  r.c1 = extend(child, {{func("row_id", {}), r.rid}, {call->arg(0), r.xv}});
  std::vector<NamedExpr> renames;
  std::vector<std::string> reserved{r.rid, r.xv};
  for (const auto& c : model_rel.schema.columns()) {
    r.renamed.push_back(detail::fresh_name("__" + c.name, seed, {&r.c1->schema()}, reserved));
    reserved.push_back(r.renamed.back());
    renames.push_back({col(c.name), r.renamed.back()});
  }
  PlanPtr rel = project(scan(model_rel.name, model_rel.schema), std::move(renames));
  r.pairs = cross_join(keep_columns(r.c1, {r.rid, r.xv}), rel);
  r.rid2 = detail::fresh_name("__rid2", seed, {&r.c1->schema()}, reserved);
  r.term = detail::fresh_name("__term", seed, {&r.c1->schema()}, reserved);
  r.y = detail::fresh_name("__y", seed, {&r.c1->schema()}, reserved);
  return r;
}

PlanPtr finish(const PlanPtr& node, const ExprPtr& call, const Relationalized& r, ExprPtr per_pair, AggFn fn) {
  PlanPtr terms = project(r.pairs, {{col(r.rid), r.rid2}, {std::move(per_pair), r.term}});
  PlanPtr scores = aggregate(terms, {{col(r.rid2), r.rid2}}, {{fn, col(r.term), r.y}});
  PlanPtr joined = join(r.c1, scores, cmp(CompareOp::Eq, col(r.rid), col(r.rid2)));
  std::vector<NamedExpr> items = node->as<ProjectOp>()->items;
  for (auto& it : items) it.expr = detail::replace_subexpr(it.expr, *call, col(r.y));
  return project(joined, std::move(items));
}

ExprPtr first_in_items(const PlanNode& node, const std::function<bool(const ExprPtr&)>& pred) {
  const auto* p = node.as<ProjectOp>();
  if (!p) return nullptr;
  for (const auto& it : p->items)
    if (auto c = detail::find_call(it.expr, pred)) return c;
  return nullptr;
}

class MatMul2Relation final : public ActionTemplate<MatMul2Relation> {
 public:
  using ActionTemplate::ActionTemplate;
  std::string_view template_id() const override { return "MatMul2Relation"; }
  std::string_view summary() const override {
    return "Rewrite a vector-matrix product as a cross join with the weight relation plus a grouped sum.";
  }

  bool matches_plan(const PlanPtr& node, RewriteContext& ctx) const override { return target(*node, ctx) != nullptr; }

  PlanPtr rewrite_plan(const PlanPtr& node, RewriteContext& ctx) const override {
    const ExprPtr call = target(*node, ctx);
    const auto& id = *call->as<MLCall>()->attrs.model_id;
    const Relationalized r = start(node, call, ctx.catalog->get(model_table_name(id)));
    // pairs columns: rid, xv, k, w (renamed)
    ExprPtr per_pair = arith(ArithOp::Mul, col(r.renamed[1]), func("element", {col(r.xv), col(r.renamed[0])}));
    return finish(node, call, r, std::move(per_pair), AggFn::Sum);
  }

 private:
  /// Innermost vector matmul over a plain matrix model with a materialized relation.
  ExprPtr target(const PlanNode& node, RewriteContext& ctx) const {
    if (node.kind() != NodeKind::Project || !ctx.catalog) return nullptr;
    const Schema in = node.input_schema();
    return first_in_items(node, [&](const ExprPtr& e) {
      const auto* c = e->as<MLCall>();
      if (c->fn != MLFunctionId::MatrixMultiply || e->args().size() != 1 || c->attrs.weight_rows || !c->attrs.model_id)
        return false;
      if (!ctx.models.contains(*c->attrs.model_id) ||
          !std::holds_alternative<DenseMatrix>(ctx.models.get(*c->attrs.model_id)))
        return false;
      if (!ctx.catalog->contains(model_table_name(*c->attrs.model_id))) return false;
      if (detail::find_call(e->arg(0), [](const ExprPtr& x) { return x->is_ml(MLFunctionId::MatrixMultiply); })) return false;
      return type_of(*e->arg(0), in).kind == TypeKind::Vector;
    });
  }
};

class DecisionForestUDF2Relation final : public ActionTemplate<DecisionForestUDF2Relation> {
 public:
  using ActionTemplate::ActionTemplate;
  std::string_view template_id() const override { return "DecisionForestUDF2Relation"; }
  std::string_view summary() const override {
    return "Rewrite forest inference as a cross join with the tree relation, per-tree scoring and an aggregate.";
  }

  bool matches_plan(const PlanPtr& node, RewriteContext& ctx) const override { return target(*node, ctx) != nullptr; }

  PlanPtr rewrite_plan(const PlanPtr& node, RewriteContext& ctx) const override {
    const ExprPtr call = target(*node, ctx);
    const auto* c = call->as<MLCall>();
    const Relationalized r = start(node, call, ctx.catalog->get(model_table_name(*c->attrs.model_id)));
    ExprPtr per_pair = ml(MLFunctionId::DecisionTree, {col(r.xv), col(r.renamed[0])}, c->attrs);
    AggFn fn = AggFn::Avg;
    if (c->attrs.tree_spec->aggregation == ForestAggregation::Majority) fn = AggFn::MajorityVote;
    if (c->attrs.tree_spec->aggregation == ForestAggregation::Sum) fn = AggFn::Sum;
    return finish(node, call, r, std::move(per_pair), fn);
  }

 private:
  ExprPtr target(const PlanNode& node, RewriteContext& ctx) const {
    if (node.kind() != NodeKind::Project || !ctx.catalog) return nullptr;
    const Schema in = node.input_schema();
    return first_in_items(node, [&](const ExprPtr& e) {
      const auto* c = e->as<MLCall>();
      if (c->fn != MLFunctionId::DecisionForest || e->args().size() != 1 || !c->attrs.tree_spec || !c->attrs.model_id)
        return false;
      if (!ctx.catalog->contains(model_table_name(*c->attrs.model_id))) return false;
      const Table& rel = ctx.catalog->get(model_table_name(*c->attrs.model_id));
      if (rel.rows() != c->attrs.tree_spec->trees.size()) return false;
      return type_of(*e->arg(0), in).kind == TypeKind::Vector;
    });
  }
};

}  // namespace

ActionPtr make_matmul2relation() { return std::make_shared<MatMul2Relation>("MatMul2Relation", ActionParams{}); }
ActionPtr make_forest2relation() {
  return std::make_shared<DecisionForestUDF2Relation>("DecisionForestUDF2Relation", ActionParams{});
}

}  // namespace optbench
