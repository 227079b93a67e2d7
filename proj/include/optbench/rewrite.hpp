#pragma once

#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "optbench/catalog.hpp"
#include "optbench/models.hpp"
#include "optbench/plan.hpp"
#include "optbench/statistics.hpp"

namespace optbench {

using ActionParams = std::map<std::string, double>;

/// One structural change made by an action, at the node it changed.
struct RewriteDelta {
  std::string action;
  std::string node_path;
  std::uint64_t before_hash = 0;
  std::uint64_t after_hash = 0;
  std::string description;
};

nlohmann::json delta_to_json(const RewriteDelta& d);

/// What an action may consult while rewriting. `stats` may be null, in which
/// case statistic-gated actions leave the plan alone.
struct RewriteContext {
  const ModelStore& models;
  const Catalog* catalog = nullptr;
  StatsCollector* stats = nullptr;
};

struct ExprRewrite {
  bool modified = false;
  ExprPtr expr;
};

class RewriteAction;
using ActionPtr = std::shared_ptr<const RewriteAction>;

/// A named, parameterized transformation. Plan-level actions implement
/// matches_plan/rewrite_plan; expression-level actions implement rewrite_expr,
/// which receives the node owning the expression for statistics lookups.
class RewriteAction {
 public:
  RewriteAction(std::string name, ActionParams params) : name_(std::move(name)), params_(std::move(params)) {}
  virtual ~RewriteAction() = default;

  const std::string& name() const { return name_; }
  const ActionParams& params() const { return params_; }
  double param(const std::string& key) const;

  /// Built-in transformation this action instantiates.
  virtual std::string_view template_id() const = 0;
  virtual std::string_view summary() const = 0;

  virtual bool matches_plan(const PlanPtr& node, RewriteContext& ctx) const;
  virtual PlanPtr rewrite_plan(const PlanPtr& node, RewriteContext& ctx) const;
  virtual ExprRewrite rewrite_expr(const ExprPtr& e, const PlanPtr& owner, RewriteContext& ctx) const;

  /// Same transformation under a new name with some parameters overridden.
  /// Throws ValidationError for parameters the template does not have.
  virtual ActionPtr with_params(std::string name, const ActionParams& overrides) const = 0;

 private:
  std::string name_;
  ActionParams params_;
};

template <typename Derived>
class ActionTemplate : public RewriteAction {
 public:
  using RewriteAction::RewriteAction;
  ActionPtr with_params(std::string name, const ActionParams& overrides) const override {
    ActionParams merged = params();
    for (const auto& [k, v] : overrides) {
      if (!merged.count(k)) fail(ErrorCode::ValidationError, "action '" + this->name() + "' has no parameter '" + k + "'", k);
      merged[k] = v;
    }
    return std::make_shared<Derived>(std::move(name), std::move(merged));
  }
};

struct RewriteResult {
  bool modified = false;
  PlanPtr plan;
  std::vector<RewriteDelta> deltas;
};

/// Applies one action over the whole tree: at each node, plan-level match and
/// rewrite first, then every expression of the (possibly new) node, then the
/// children. A delta is emitted per node whose hash changed and `modified` is
/// true exactly when at least one delta was emitted. A rewrite that yields an
/// ill-formed plan raises RewriteProducedInvalidPlan.
RewriteResult apply_plan_rewrite(const RewriteAction& action, const PlanPtr& plan, RewriteContext& ctx);

// Built-in actions.
ActionPtr make_matmul_dense2sparse();
ActionPtr make_fuse2_torch_nn();
ActionPtr make_multilayer_udf2_torch_nn();
ActionPtr make_conv2matmul();
ActionPtr make_matmul2relation();
ActionPtr make_forest2relation();
ActionPtr make_ml_decomposition_pushdown();
ActionPtr make_ml_factorization();
ActionPtr make_tree_model_pruning();
/// Classical relational filter pushdown; used by the heuristic baseline and
/// not listed among the ML-aware actions.
ActionPtr make_filter_pushdown();

/// Path-refined pruning of one tree against closed per-feature bounds
/// (feature i constrained to [first, second]).
DecisionTree prune_tree(const DecisionTree& t, const std::vector<std::pair<double, double>>& closed_bounds);

/// The nine ML-aware actions in canonical order.
std::vector<ActionPtr> builtin_actions();

inline constexpr std::string_view kActionFormat = "optbench-action/1";
inline constexpr std::string_view kUserPrefix = "user/";

/// Built-ins plus uploaded parameterizations. Reads may run concurrently with
/// uploads.
class ActionRegistry {
 public:
  ActionRegistry();

  std::vector<ActionPtr> list() const;
  ActionPtr get(const std::string& name) const;  // throws UnknownAction
  bool contains(const std::string& name) const;
  /// Registers `action`; uploads must be namespaced under "user/".
  void add(ActionPtr action, bool replace = false);

  /// Parses an `optbench-action/1` document {format, name, template, params}
  /// and registers it under "user/<name>". Returns the registered action.
  ActionPtr upload(const nlohmann::json& doc, bool replace = false);

 private:
  mutable std::shared_mutex mu_;
  std::vector<ActionPtr> actions_;
};

/// Resolves a template id (built-in action name, or filter pushdown) to its prototype.
ActionPtr action_template(const std::string& template_id);

nlohmann::json action_to_json(const RewriteAction& a);
nlohmann::json action_document(const RewriteAction& a);

}  // namespace optbench
