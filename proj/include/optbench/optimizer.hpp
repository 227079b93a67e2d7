#pragma once

#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "optbench/rewrite.hpp"
#include "optbench/statistics.hpp"

namespace optbench {

// ---- cost model -----------------------------------------------------------

struct CostWeights {
  double scan = 1.0;
  double filter = 1.0;
  double project = 1.0;
  double join = 2.0;
  double aggregate = 1.5;
  double limit = 1.0;
  double sample = 1.0;

  double of(NodeKind k) const;
};

/// Sum over nodes of est_cardinality x kind weight, plus sum over ML calls of
/// input rows x flops x kernel factor (nnz_ratio for a sparse matmul, else 1).
class CostModel {
 public:
  explicit CostModel(CostWeights w = {}) : weights_(w) {}
  const CostWeights& weights() const { return weights_; }
  double relational_cost(const PlanPtr& plan, StatsCollector& stats) const;
  double ml_cost(const PlanPtr& plan, StatsCollector& stats) const;
  double score(const PlanPtr& plan, StatsCollector& stats) const {
    return relational_cost(plan, stats) + ml_cost(plan, stats);
  }

 private:
  CostWeights weights_;
};

// ---- rule DSL -------------------------------------------------------------

/// `stat op number` leaves combined with AND / OR (AND binds tighter) and parentheses.
struct RulePredicate {
  enum class Kind { Compare, And, Or } kind = Kind::Compare;
  std::string stat;
  CompareOp op = CompareOp::Eq;
  double value = 0.0;
  std::vector<RulePredicate> operands;

  /// A leaf whose statistic is absent evaluates to false.
  bool holds(const StatMap& row) const;
  void referenced(std::vector<std::string>& out) const;
  std::string to_string() const;
};

/// Throws ParseError (with the character offset as detail) or UnknownStatistic.
RulePredicate parse_rule_predicate(std::string_view text);

struct ActionRef {
  std::string name;
  ActionParams params;  // overrides of the registered action's parameters
};

enum class RuleScope { AnyNode, Root };

struct Rule {
  std::string name;
  std::string when;  // predicate source text
  RulePredicate predicate;
  RuleScope scope = RuleScope::AnyNode;
  int priority = 0;  // higher fires first; ties keep declaration order
  std::vector<ActionRef> actions;
};

struct RuleSet {
  std::vector<Rule> rules;
  int max_passes = 10;
};

struct DPConfig {
  int depth = 2;
  std::vector<ActionRef> actions;
  std::string cost_model = "default";
  std::optional<std::size_t> frontier_cap;
  CostWeights weights;
};

enum class ProfileKind { NoOp, Heuristic, RuleBased, CostBasedDP, External };
std::string_view profile_kind_name(ProfileKind k);

struct OptimizerProfile {
  std::string name;
  ProfileKind kind = ProfileKind::NoOp;
  std::string description;
  std::variant<std::monostate, RuleSet, DPConfig> definition;
  bool uploaded = false;
};

// ---- traces ---------------------------------------------------------------

struct AppliedAction {
  std::string action;  // registered action name
  ActionParams params;  // full parameter set used
};

struct TraceEvent {
  std::string type;  // rule_fired | action_applied | plan_scored | plan_pruned | best_updated
  nlohmann::json data;
};

struct DecisionTrace {
  std::string optimizer;
  std::vector<TraceEvent> events;
  std::vector<AppliedAction> applied_sequence;
  std::uint64_t input_hash = 0;
  std::uint64_t output_hash = 0;
  double final_cost = 0.0;
  double elapsed_ms = 0.0;
};

nlohmann::json trace_to_json(const DecisionTrace& t);
/// Events, applied sequence, hashes and cost; excludes timing and the profile name.
bool same_decisions(const DecisionTrace& a, const DecisionTrace& b);

struct OptimizeContext {
  const ModelStore& models;
  const Catalog& catalog;
  StatsCollector& stats;
  const ActionRegistry& actions;
};

struct OptimizeResult {
  PlanPtr plan;
  DecisionTrace trace;
};

OptimizeResult run_rule_based(const RuleSet& rules, const PlanPtr& plan, OptimizeContext& ctx);
OptimizeResult run_dp_optimizer(const DPConfig& config, const PlanPtr& plan, OptimizeContext& ctx);
OptimizeResult run_heuristic(const PlanPtr& plan, OptimizeContext& ctx);
OptimizeResult optimize(const OptimizerProfile& profile, const PlanPtr& plan, OptimizeContext& ctx);

/// Re-applies a trace's action sequence to its input plan.
PlanPtr replay(const DecisionTrace& trace, const PlanPtr& input, OptimizeContext& ctx);

/// Minimum cost over every action sequence of length <= depth (the DP oracle).
struct BruteForceResult {
  double best_cost = 0.0;
  std::size_t sequences = 0;
};
BruteForceResult brute_force_min_cost(const DPConfig& config, const PlanPtr& plan, OptimizeContext& ctx);

// ---- documents and registry -----------------------------------------------

inline constexpr std::string_view kOptimizerFormat = "optbench-optimizer/1";

/// Parses and validates an `optbench-optimizer/1` document against the action
/// registry. Errors carry a JSON-pointer location in detail().
OptimizerProfile profile_from_json(const nlohmann::json& doc, const ActionRegistry& actions);
nlohmann::json profile_to_json(const OptimizerProfile& p);

std::vector<OptimizerProfile> builtin_profiles();

class OptimizerRegistry {
 public:
  OptimizerRegistry();
  std::vector<OptimizerProfile> list() const;
  OptimizerProfile get(const std::string& name) const;  // throws UnknownOptimizer
  bool contains(const std::string& name) const;
  void add(OptimizerProfile p, bool replace = false);    // throws DuplicateName
  /// Validates and registers an uploaded document under "user/<name>".
  OptimizerProfile upload(const nlohmann::json& doc, const ActionRegistry& actions, bool replace = false);

 private:
  mutable std::shared_mutex mu_;
  std::vector<OptimizerProfile> profiles_;
};

}  // namespace optbench
