#include "optbench/rewrite.hpp"

#include <algorithm>
#include <mutex>

namespace optbench {

using nlohmann::json;

json delta_to_json(const RewriteDelta& d) {
  return {{"action", d.action},
          {"node_path", d.node_path},
          {"before_hash", hex64(d.before_hash)},
          {"after_hash", hex64(d.after_hash)},
          {"description", d.description}};
}

double RewriteAction::param(const std::string& key) const {
  auto it = params_.find(key);
  if (it == params_.end()) fail(ErrorCode::Internal, "action '" + name_ + "' has no parameter '" + key + "'");
  return it->second;
}

bool RewriteAction::matches_plan(const PlanPtr&, RewriteContext&) const { return false; }
PlanPtr RewriteAction::rewrite_plan(const PlanPtr& node, RewriteContext&) const { return node; }
ExprRewrite RewriteAction::rewrite_expr(const ExprPtr& e, const PlanPtr&, RewriteContext&) const { return {false, e}; }

namespace {

template <typename Fn>
PlanPtr checked(const RewriteAction& action, const std::string& path, Fn&& build) {
  try {
    return build();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::RewriteProducedInvalidPlan) throw;
    fail(ErrorCode::RewriteProducedInvalidPlan, action.name() + " produced an invalid plan at " + path + ": " + e.message(), path);
  }
}

PlanPtr apply_node(const RewriteAction& action, const PlanPtr& node, const std::string& path, RewriteContext& ctx,
                   std::vector<RewriteDelta>& deltas) {
  PlanPtr cur = node;
  if (action.matches_plan(cur, ctx)) {
    PlanPtr next = checked(action, path, [&] { return action.rewrite_plan(cur, ctx); });
    if (next->hash() != cur->hash()) {
      deltas.push_back({action.name(), path, cur->hash(), next->hash(), "plan rewrite of " + std::string(node_kind_name(cur->kind()))});
      cur = std::move(next);
    }
  }

  auto exprs = cur->expressions();
  std::vector<std::string> changed;
  for (std::size_t i = 0; i < exprs.size(); ++i) {
    ExprRewrite r = action.rewrite_expr(exprs[i], cur, ctx);
    if (r.modified && r.expr->hash() != exprs[i]->hash()) {
      exprs[i] = std::move(r.expr);
      changed.push_back("e" + std::to_string(i));
    }
  }
  if (!changed.empty()) {
    PlanPtr next = checked(action, path, [&] { return cur->with_expressions(exprs); });
    std::string what = "rewrote expression";
    for (const auto& c : changed) what += " " + c;
    deltas.push_back({action.name(), path, cur->hash(), next->hash(), what});
    cur = std::move(next);
  }

  std::vector<PlanPtr> kids;
  bool kid_changed = false;
  for (std::size_t i = 0; i < cur->children().size(); ++i) {
    kids.push_back(apply_node(action, cur->child(i), child_path(path, i), ctx, deltas));
    kid_changed = kid_changed || kids.back() != cur->child(i);
  }
  if (kid_changed) cur = checked(action, path, [&] { return cur->with_children(kids); });
  return cur;
}

}  // namespace

RewriteResult apply_plan_rewrite(const RewriteAction& action, const PlanPtr& plan, RewriteContext& ctx) {
  RewriteResult r;
  r.plan = apply_node(action, plan, "0", ctx, r.deltas);
  r.modified = !r.deltas.empty();
  if (!r.modified) r.plan = plan;
  return r;
}

std::vector<ActionPtr> builtin_actions() {
  return {make_matmul_dense2sparse(),        make_forest2relation(),   make_matmul2relation(),
          make_conv2matmul(),                make_multilayer_udf2_torch_nn(), make_ml_decomposition_pushdown(),
          make_fuse2_torch_nn(),             make_ml_factorization(),  make_tree_model_pruning()};
}

ActionPtr action_template(const std::string& template_id) {
  for (auto& a : builtin_actions())
    if (a->template_id() == template_id) return a;
  auto fp = make_filter_pushdown();
  if (fp->template_id() == template_id) return fp;
  fail(ErrorCode::UnknownAction, "unknown action template '" + template_id + "'", template_id);
}

ActionRegistry::ActionRegistry() : actions_(builtin_actions()) {}

std::vector<ActionPtr> ActionRegistry::list() const {
  std::shared_lock lock(mu_);
  return actions_;
}

ActionPtr ActionRegistry::get(const std::string& name) const {
  std::shared_lock lock(mu_);
  for (const auto& a : actions_)
    if (a->name() == name) return a;
  fail(ErrorCode::UnknownAction, "unknown action '" + name + "'", name);
}

bool ActionRegistry::contains(const std::string& name) const {
  std::shared_lock lock(mu_);
  return std::any_of(actions_.begin(), actions_.end(), [&](const auto& a) { return a->name() == name; });
}

void ActionRegistry::add(ActionPtr action, bool replace) {
  std::unique_lock lock(mu_);
  auto it = std::find_if(actions_.begin(), actions_.end(), [&](const auto& a) { return a->name() == action->name(); });
  if (it != actions_.end()) {
    if (!replace || !(*it)->name().starts_with(kUserPrefix))
      fail(ErrorCode::DuplicateName, "action '" + action->name() + "' already registered", action->name());
    *it = std::move(action);
    return;
  }
  if (!action->name().starts_with(kUserPrefix) && action_template(std::string(action->template_id()))->name() != action->name())
    fail(ErrorCode::ValidationError, "uploaded actions must be named under " + std::string(kUserPrefix), action->name());
  actions_.push_back(std::move(action));
}

ActionPtr ActionRegistry::upload(const json& doc, bool replace) {
  if (!doc.is_object()) fail(ErrorCode::ParseError, "action document must be an object", "");
  if (doc.value("format", "") != kActionFormat) fail(ErrorCode::ParseError, "expected format " + std::string(kActionFormat), "/format");
  for (const auto& [k, _] : doc.items())
    if (k != "format" && k != "name" && k != "template" && k != "params" && k != "description")
      fail(ErrorCode::ParseError, "unknown field '" + k + "'", "/" + k);
  if (!doc.contains("name") || !doc["name"].is_string() || doc["name"].get<std::string>().empty())
    fail(ErrorCode::ValidationError, "action needs a non-empty name", "/name");
  if (!doc.contains("template") || !doc["template"].is_string()) fail(ErrorCode::ValidationError, "action needs a template", "/template");
  std::string name = doc["name"].get<std::string>();
  if (!name.starts_with(kUserPrefix)) name = std::string(kUserPrefix) + name;
  ActionPtr proto;
  try {
    proto = action_template(doc["template"].get<std::string>());
  } catch (const Error& e) {
    fail(e.code(), e.message(), "/template");
  }
  ActionParams overrides;
  if (doc.contains("params")) {
    if (!doc["params"].is_object()) fail(ErrorCode::ValidationError, "params must be an object", "/params");
    for (const auto& [k, v] : doc["params"].items()) {
      if (!v.is_number()) fail(ErrorCode::ValidationError, "parameter values must be numbers", "/params/" + k);
      overrides[k] = v.get<double>();
    }
  }
  ActionPtr action;
  try {
    action = proto->with_params(name, overrides);
  } catch (const Error& e) {
    fail(e.code(), e.message(), "/params/" + e.detail());
  }
  add(action, replace);
  return action;
}

json action_to_json(const RewriteAction& a) {
  return {{"name", a.name()}, {"template", std::string(a.template_id())}, {"summary", std::string(a.summary())}, {"params", a.params()}};
}

json action_document(const RewriteAction& a) {
  return {{"format", std::string(kActionFormat)}, {"name", a.name()}, {"template", std::string(a.template_id())}, {"params", a.params()}};
}

}  // namespace optbench
