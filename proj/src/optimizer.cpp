#include "optbench/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <mutex>
#include <unordered_map>

namespace optbench {

using nlohmann::json;

// ---- cost model -----------------------------------------------------------

double CostWeights::of(NodeKind k) const {
  switch (k) {
    case NodeKind::Scan: return scan;
    case NodeKind::Filter: return filter;
    case NodeKind::Project: return project;
    case NodeKind::Join: return join;
    case NodeKind::Aggregate: return aggregate;
    case NodeKind::Limit: return limit;
    case NodeKind::Sample: return sample;
  }
  return 1.0;
}

double CostModel::relational_cost(const PlanPtr& plan, StatsCollector& stats) const {
  double total = 0.0;
  visit_preorder(plan, [&](const PlanPtr& n, const std::string&) { total += stats.cardinality(n) * weights_.of(n->kind()); });
  return total;
}

double CostModel::ml_cost(const PlanPtr& plan, StatsCollector& stats) const {
  double total = 0.0;
  for (const auto& site : ml_call_sites(plan)) {
    const StatMap m = stats.ml_static_entries(site.owner, site.call);
    double factor = 1.0;
    const auto* c = site.call->as<MLCall>();
    if (c->fn == MLFunctionId::MatrixMultiply && c->attrs.mode() == KernelMode::Sparse && stats.config().sampling) {
      try {
        factor = stats.sample_ml_stats(site.owner, site.call).nnz_ratio;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptySample && e.code() != ErrorCode::NonNumericFeature) throw;
      }
    }
    total += m.at("input_rows").value * m.at("flops").value * factor;
  }
  return total;
}

// ---- traces ---------------------------------------------------------------

namespace {

json params_json(const ActionParams& p) {
  json j = json::object();
  for (const auto& [k, v] : p) j[k] = v;
  return j;
}

json applied_json(const AppliedAction& a) { return {{"action", a.action}, {"params", params_json(a.params)}}; }

json sequence_json(const std::vector<AppliedAction>& seq) {
  json j = json::array();
  for (const auto& a : seq) j.push_back(applied_json(a));
  return j;
}

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

ActionPtr resolve(const OptimizeContext& ctx, const std::string& name, const ActionParams& params) {
  ActionPtr base = ctx.actions.contains(name) ? ctx.actions.get(name) : action_template(name);
  if (params.empty() || params == base->params()) return base;
  return base->with_params(name, params);
}

/// Conv configurations the kernel cannot lower are skipped rather than fatal.
bool skippable(const Error& e) {
  return e.code() == ErrorCode::UnsupportedConvConfig || e.code() == ErrorCode::NotApplicable;
}

struct Tracer {
  DecisionTrace trace;
  Clock::time_point start = Clock::now();

  void event(std::string type, json data) { trace.events.push_back({std::move(type), std::move(data)}); }

  /// Applies `action`; records it and returns true when the plan changed.
  bool apply(const RewriteAction& action, PlanPtr& plan, OptimizeContext& ctx, json where) {
    RewriteContext rctx{ctx.models, &ctx.catalog, &ctx.stats};
    RewriteResult r;
    try {
      r = apply_plan_rewrite(action, plan, rctx);
    } catch (const Error& e) {
      if (!skippable(e)) throw;
      where["action"] = action.name();
      where["skipped"] = std::string(error_code_name(e.code()));
      event("action_applied", std::move(where));
      return false;
    }
    if (!r.modified) return false;
    json deltas = json::array();
    for (const auto& d : r.deltas) deltas.push_back(delta_to_json(d));
    where["action"] = action.name();
    where["params"] = params_json(action.params());
    where["deltas"] = std::move(deltas);
    event("action_applied", std::move(where));
    trace.applied_sequence.push_back({action.name(), action.params()});
    plan = r.plan;
    return true;
  }

  OptimizeResult finish(const PlanPtr& input, PlanPtr out, OptimizeContext& ctx, const CostModel& cost) {
    trace.input_hash = input->hash();
    trace.output_hash = out->hash();
    trace.final_cost = cost.score(out, ctx.stats);
    trace.elapsed_ms = ms_since(start);
    return {std::move(out), std::move(trace)};
  }
};

}  // namespace

json trace_to_json(const DecisionTrace& t) {
  json events = json::array();
  for (const auto& e : t.events) events.push_back({{"type", e.type}, {"data", e.data}});
  return {{"format", "optbench-trace/1"},
          {"optimizer", t.optimizer},
          {"input_hash", hex64(t.input_hash)},
          {"output_hash", hex64(t.output_hash)},
          {"final_cost", t.final_cost},
          {"elapsed_ms", t.elapsed_ms},
          {"applied_sequence", sequence_json(t.applied_sequence)},
          {"events", std::move(events)}};
}

bool same_decisions(const DecisionTrace& a, const DecisionTrace& b) {
  json ja = trace_to_json(a), jb = trace_to_json(b);
  for (auto* j : {&ja, &jb}) {
    j->erase("elapsed_ms");
    j->erase("optimizer");
  }
  return ja == jb;
}

// ---- rule-based -----------------------------------------------------------

namespace {

struct RuleMatch {
  std::string node_path;
  std::string expr_path;
  StatMap row;
};

std::optional<RuleMatch> find_match(const Rule& rule, const StatsVector& sv) {
  for (const auto& ns : sv.nodes) {
    if (rule.scope == RuleScope::Root && ns.path != "0") continue;
    if (ns.ml_calls.empty()) {
      if (rule.predicate.holds(ns.entries)) return RuleMatch{ns.path, {}, ns.entries};
      continue;
    }
    for (const auto& mc : ns.ml_calls) {
      StatMap row = ns.entries;
      for (const auto& [k, v] : mc.entries) row[k] = v;
      if (rule.predicate.holds(row)) return RuleMatch{ns.path, mc.expr_path, std::move(row)};
    }
  }
  return std::nullopt;
}

}  // namespace

OptimizeResult run_rule_based(const RuleSet& rules, const PlanPtr& plan, OptimizeContext& ctx) {
  Tracer tr;
  std::vector<const Rule*> order;
  for (const auto& r : rules.rules) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](const Rule* a, const Rule* b) { return a->priority > b->priority; });

  PlanPtr current = plan;
  for (int pass = 0; pass < rules.max_passes; ++pass) {
    bool changed = false;
    for (const Rule* rule : order) {
      const auto match = find_match(*rule, ctx.stats.collect(current));
      if (!match) continue;
      std::vector<std::string> refs;
      rule->predicate.referenced(refs);
      json snapshot = json::object();
      for (const auto& s : refs)
        if (auto it = match->row.find(s); it != match->row.end()) snapshot[s] = it->second.value;
      tr.event("rule_fired", {{"pass", pass},
                              {"rule", rule->name},
                              {"node_path", match->node_path},
                              {"expr_path", match->expr_path},
                              {"stats", std::move(snapshot)}});
      for (const auto& ref : rule->actions) {
        const ActionPtr a = resolve(ctx, ref.name, ref.params);
        changed = tr.apply(*a, current, ctx, {{"pass", pass}, {"rule", rule->name}}) || changed;
      }
    }
    if (!changed) break;
  }
  return tr.finish(plan, current, ctx, CostModel{});
}

OptimizeResult run_heuristic(const PlanPtr& plan, OptimizeContext& ctx) {
  Tracer tr;
  const ActionPtr pushdown = make_filter_pushdown();
  PlanPtr current = plan;
  for (int pass = 0; pass < 10; ++pass)
    if (!tr.apply(*pushdown, current, ctx, {{"pass", pass}})) break;
  return tr.finish(plan, current, ctx, CostModel{});
}

// ---- dynamic programming --------------------------------------------------

namespace {

struct SearchState {
  PlanPtr plan;
  double cost = 0.0;
  std::vector<AppliedAction> path;
};

/// (cost, #actions, hash) lexicographic.
bool better(const SearchState& a, const SearchState& b) {
  if (a.cost != b.cost) return a.cost < b.cost;
  if (a.path.size() != b.path.size()) return a.path.size() < b.path.size();
  return a.plan->hash() < b.plan->hash();
}

std::vector<ActionPtr> resolve_all(const OptimizeContext& ctx, const std::vector<ActionRef>& refs) {
  std::vector<ActionPtr> out;
  if (refs.empty()) return ctx.actions.list();
  for (const auto& r : refs) out.push_back(resolve(ctx, r.name, r.params));
  return out;
}

/// Applies one action; nullopt when it does not change the plan or cannot be applied.
std::optional<PlanPtr> step(const RewriteAction& a, const PlanPtr& plan, OptimizeContext& ctx, std::string* skipped) {
  RewriteContext rctx{ctx.models, &ctx.catalog, &ctx.stats};
  try {
    auto r = apply_plan_rewrite(a, plan, rctx);
    if (!r.modified) return std::nullopt;
    return r.plan;
  } catch (const Error& e) {
    if (!skippable(e)) throw;
    if (skipped) *skipped = error_code_name(e.code());
    return std::nullopt;
  }
}

}  // namespace

OptimizeResult run_dp_optimizer(const DPConfig& config, const PlanPtr& plan, OptimizeContext& ctx) {
  Tracer tr;
  const CostModel cost(config.weights);
  const auto actions = resolve_all(ctx, config.actions);

  SearchState best{plan, cost.score(plan, ctx.stats), {}};
  tr.event("plan_scored", {{"depth", 0}, {"hash", hex64(plan->hash())}, {"cost", best.cost}});
  // Best (cost, length) seen per plan hash.
  std::unordered_map<std::uint64_t, std::pair<double, std::size_t>> memo{{plan->hash(), {best.cost, 0}}};
  std::vector<SearchState> frontier{best};

  for (int depth = 1; depth <= config.depth && !frontier.empty(); ++depth) {
    std::vector<SearchState> next;
    for (const auto& s : frontier) {
      for (const auto& a : actions) {
        std::string skipped;
        auto p = step(*a, s.plan, ctx, &skipped);
        if (!p) {
          if (!skipped.empty())
            tr.event("plan_pruned", {{"depth", depth}, {"action", a->name()}, {"parent", hex64(s.plan->hash())}, {"reason", skipped}});
          continue;
        }
        SearchState cand{*p, cost.score(*p, ctx.stats), s.path};
        cand.path.push_back({a->name(), a->params()});
        const std::string h = hex64(cand.plan->hash());
        tr.event("plan_scored",
                 {{"depth", depth}, {"action", a->name()}, {"parent", hex64(s.plan->hash())}, {"hash", h}, {"cost", cand.cost}});
        auto it = memo.find(cand.plan->hash());
        if (it != memo.end() && std::pair{it->second.first, it->second.second} <= std::pair{cand.cost, cand.path.size()}) {
          tr.event("plan_pruned", {{"depth", depth}, {"hash", h}, {"reason", "memo"}});
          continue;
        }
        memo[cand.plan->hash()] = {cand.cost, cand.path.size()};
        if (better(cand, best)) {
          best = cand;
          tr.event("best_updated", {{"depth", depth}, {"hash", h}, {"cost", cand.cost}, {"sequence", sequence_json(cand.path)}});
        }
        next.push_back(std::move(cand));
      }
    }
    if (config.frontier_cap && next.size() > *config.frontier_cap) {
      std::stable_sort(next.begin(), next.end(), better);
      for (std::size_t i = *config.frontier_cap; i < next.size(); ++i)
        tr.event("plan_pruned", {{"depth", depth}, {"hash", hex64(next[i].plan->hash())}, {"reason", "frontier_cap"}});
      next.resize(*config.frontier_cap);
    }
    frontier = std::move(next);
  }
  tr.trace.applied_sequence = best.path;
  return tr.finish(plan, best.plan, ctx, cost);
}

BruteForceResult brute_force_min_cost(const DPConfig& config, const PlanPtr& plan, OptimizeContext& ctx) {
  const CostModel cost(config.weights);
  const auto actions = resolve_all(ctx, config.actions);
  BruteForceResult out{cost.score(plan, ctx.stats), 1};
  std::function<void(const PlanPtr&, int)> walk = [&](const PlanPtr& p, int depth) {
    if (depth == config.depth) return;
    for (const auto& a : actions) {
      ++out.sequences;
      // An action that leaves the plan unchanged yields the same plan and cost.
      const PlanPtr q = step(*a, p, ctx, nullptr).value_or(p);
      out.best_cost = std::min(out.best_cost, cost.score(q, ctx.stats));
      walk(q, depth + 1);
    }
  };
  walk(plan, 0);
  return out;
}

// ---- dispatch -------------------------------------------------------------

std::string_view profile_kind_name(ProfileKind k) {
  switch (k) {
    case ProfileKind::NoOp: return "noop-baseline";
    case ProfileKind::Heuristic: return "heuristic-baseline";
    case ProfileKind::RuleBased: return "rule-based";
    case ProfileKind::CostBasedDP: return "cost-based-dp";
    case ProfileKind::External: return "external";
  }
  return "?";
}

OptimizeResult optimize(const OptimizerProfile& profile, const PlanPtr& plan, OptimizeContext& ctx) {
  OptimizeResult r;
  try {
    if (const auto* rs = std::get_if<RuleSet>(&profile.definition)) {
      r = run_rule_based(*rs, plan, ctx);
    } else if (const auto* dp = std::get_if<DPConfig>(&profile.definition)) {
      r = run_dp_optimizer(*dp, plan, ctx);
    } else if (profile.kind == ProfileKind::Heuristic) {
      r = run_heuristic(plan, ctx);
    } else if (profile.kind == ProfileKind::NoOp) {
      Tracer tr;
      r = tr.finish(plan, plan, ctx, CostModel{});
    } else {
      fail(ErrorCode::OptimizerFailed, "profile '" + profile.name + "' has no runnable definition");
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::OptimizerFailed) throw;
    fail(ErrorCode::OptimizerFailed, profile.name + ": " + e.what(), std::string(error_code_name(e.code())));
  }
  r.trace.optimizer = profile.name;
  return r;
}

PlanPtr replay(const DecisionTrace& trace, const PlanPtr& input, OptimizeContext& ctx) {
  if (input->hash() != trace.input_hash) fail(ErrorCode::ValidationError, "trace was recorded for a different input plan");
  PlanPtr p = input;
  for (const auto& a : trace.applied_sequence) {
    RewriteContext rctx{ctx.models, &ctx.catalog, &ctx.stats};
    p = apply_plan_rewrite(*resolve(ctx, a.action, a.params), p, rctx).plan;
  }
  return p;
}

// ---- documents ------------------------------------------------------------

namespace {

[[noreturn]] void invalid(const std::string& msg, const std::string& where) { fail(ErrorCode::ValidationError, msg, where); }

void only_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  for (const auto& [k, _] : j.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) invalid("unknown field '" + k + "'", where + "/" + k);
}

ActionRef parse_action_ref(const json& j, const ActionRegistry& reg, const std::string& where) {
  ActionRef ref;
  if (j.is_string()) {
    ref.name = j.get<std::string>();
  } else if (j.is_object()) {
    only_keys(j, {"name", "params"}, where);
    if (!j.contains("name") || !j["name"].is_string()) invalid("action reference needs a string 'name'", where + "/name");
    ref.name = j["name"].get<std::string>();
    if (j.contains("params")) {
      if (!j["params"].is_object()) invalid("'params' must be an object", where + "/params");
      for (const auto& [k, v] : j["params"].items()) {
        if (!v.is_number()) invalid("parameter '" + k + "' must be a number", where + "/params/" + k);
        ref.params[k] = v.get<double>();
      }
    }
  } else {
    invalid("action reference must be a name or {name, params}", where);
  }
  if (!reg.contains(ref.name)) fail(ErrorCode::UnknownAction, "unknown action '" + ref.name + "'", where);
  try {
    if (!ref.params.empty()) reg.get(ref.name)->with_params(ref.name, ref.params);
  } catch (const Error& e) {
    fail(e.code(), e.message(), where + "/params");
  }
  return ref;
}

std::vector<ActionRef> parse_action_list(const json& j, const ActionRegistry& reg, const std::string& where) {
  if (!j.is_array()) invalid("'actions' must be an array", where);
  std::vector<ActionRef> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(parse_action_ref(j[i], reg, where + "/" + std::to_string(i)));
  return out;
}

int parse_int(const json& j, const std::string& where, int min) {
  if (!j.is_number_integer() || j.get<long long>() < min)
    invalid("expected an integer >= " + std::to_string(min), where);
  return j.get<int>();
}

RuleSet parse_rules(const json& doc, const ActionRegistry& reg) {
  RuleSet rs;
  if (!doc.contains("rules") || !doc["rules"].is_array()) invalid("'rules' must be an array", "/rules");
  const json& rules = doc["rules"];
  for (std::size_t i = 0; i < rules.size(); ++i) {
    const std::string where = "/rules/" + std::to_string(i);
    const json& r = rules[i];
    if (!r.is_object()) invalid("rule must be an object", where);
    only_keys(r, {"name", "when", "scope", "priority", "actions"}, where);
    Rule rule;
    if (!r.contains("name") || !r["name"].is_string()) invalid("rule needs a string 'name'", where + "/name");
    rule.name = r["name"].get<std::string>();
    if (!r.contains("when") || !r["when"].is_string()) invalid("rule needs a string 'when'", where + "/when");
    rule.when = r["when"].get<std::string>();
    try {
      rule.predicate = parse_rule_predicate(rule.when);
    } catch (const Error& e) {
      fail(e.code(), e.message(), where + "/when");
    }
    if (r.contains("scope")) {
      const std::string s = r["scope"].is_string() ? r["scope"].get<std::string>() : "";
      if (s == "any") rule.scope = RuleScope::AnyNode;
      else if (s == "root") rule.scope = RuleScope::Root;
      else invalid("scope must be 'any' or 'root'", where + "/scope");
    }
    if (r.contains("priority")) rule.priority = parse_int(r["priority"], where + "/priority", -1000000);
    if (!r.contains("actions")) invalid("rule needs 'actions'", where + "/actions");
    rule.actions = parse_action_list(r["actions"], reg, where + "/actions");
    if (rule.actions.empty()) invalid("rule has no actions", where + "/actions");
    rs.rules.push_back(std::move(rule));
  }
  if (doc.contains("max_passes")) rs.max_passes = parse_int(doc["max_passes"], "/max_passes", 1);
  return rs;
}

DPConfig parse_dp(const json& doc, const ActionRegistry& reg) {
  DPConfig c;
  if (doc.contains("depth")) c.depth = parse_int(doc["depth"], "/depth", 1);
  if (doc.contains("actions")) c.actions = parse_action_list(doc["actions"], reg, "/actions");
  if (doc.contains("cost_model")) {
    if (doc["cost_model"] != "default") invalid("only the 'default' cost model exists", "/cost_model");
  }
  if (doc.contains("frontier_cap") && !doc["frontier_cap"].is_null())
    c.frontier_cap = static_cast<std::size_t>(parse_int(doc["frontier_cap"], "/frontier_cap", 1));
  if (doc.contains("weights")) {
    const json& w = doc["weights"];
    if (!w.is_object()) invalid("'weights' must be an object", "/weights");
    only_keys(w, {"scan", "filter", "project", "join", "aggregate", "limit", "sample"}, "/weights");
    auto get = [&](const char* k, double& dst) {
      if (!w.contains(k)) return;
      if (!w[k].is_number() || w[k].get<double>() < 0) invalid("weight must be a non-negative number", std::string("/weights/") + k);
      dst = w[k].get<double>();
    };
    get("scan", c.weights.scan);
    get("filter", c.weights.filter);
    get("project", c.weights.project);
    get("join", c.weights.join);
    get("aggregate", c.weights.aggregate);
    get("limit", c.weights.limit);
    get("sample", c.weights.sample);
  }
  return c;
}

json action_refs_json(const std::vector<ActionRef>& refs) {
  json out = json::array();
  for (const auto& r : refs) {
    if (r.params.empty()) out.push_back(r.name);
    else out.push_back({{"name", r.name}, {"params", params_json(r.params)}});
  }
  return out;
}

}  // namespace

OptimizerProfile profile_from_json(const json& doc, const ActionRegistry& actions) {
  if (!doc.is_object()) invalid("optimizer document must be an object", "");
  if (!doc.contains("format") || doc["format"] != kOptimizerFormat)
    invalid("format must be '" + std::string(kOptimizerFormat) + "'", "/format");
  if (!doc.contains("name") || !doc["name"].is_string() || doc["name"].get<std::string>().empty())
    invalid("document needs a non-empty string 'name'", "/name");
  if (!doc.contains("kind") || !doc["kind"].is_string()) invalid("document needs a string 'kind'", "/kind");
  OptimizerProfile p;
  p.name = doc["name"].get<std::string>();
  if (doc.contains("description")) {
    if (!doc["description"].is_string()) invalid("'description' must be a string", "/description");
    p.description = doc["description"].get<std::string>();
  }
  const std::string kind = doc["kind"].get<std::string>();
  if (kind == "noop-baseline") {
    only_keys(doc, {"format", "name", "kind", "description"}, "");
    p.kind = ProfileKind::NoOp;
  } else if (kind == "heuristic-baseline") {
    only_keys(doc, {"format", "name", "kind", "description"}, "");
    p.kind = ProfileKind::Heuristic;
  } else if (kind == "rule-based") {
    only_keys(doc, {"format", "name", "kind", "description", "rules", "max_passes"}, "");
    p.kind = ProfileKind::RuleBased;
    p.definition = parse_rules(doc, actions);
  } else if (kind == "cost-based-dp") {
    only_keys(doc, {"format", "name", "kind", "description", "depth", "actions", "cost_model", "frontier_cap", "weights"}, "");
    p.kind = ProfileKind::CostBasedDP;
    p.definition = parse_dp(doc, actions);
  } else {
    invalid("unsupported kind '" + kind + "'", "/kind");
  }
  return p;
}

json profile_to_json(const OptimizerProfile& p) {
  json j = {{"format", kOptimizerFormat}, {"name", p.name}, {"kind", profile_kind_name(p.kind)}};
  if (!p.description.empty()) j["description"] = p.description;
  if (const auto* rs = std::get_if<RuleSet>(&p.definition)) {
    json rules = json::array();
    for (const auto& r : rs->rules)
      rules.push_back({{"name", r.name},
                       {"when", r.when},
                       {"scope", r.scope == RuleScope::Root ? "root" : "any"},
                       {"priority", r.priority},
                       {"actions", action_refs_json(r.actions)}});
    j["rules"] = std::move(rules);
    j["max_passes"] = rs->max_passes;
  } else if (const auto* dp = std::get_if<DPConfig>(&p.definition)) {
    j["depth"] = dp->depth;
    j["actions"] = action_refs_json(dp->actions);
    j["cost_model"] = dp->cost_model;
    j["frontier_cap"] = dp->frontier_cap ? json(*dp->frontier_cap) : json(nullptr);
    const auto& w = dp->weights;
    j["weights"] = {{"scan", w.scan},   {"filter", w.filter}, {"project", w.project}, {"join", w.join},
                    {"aggregate", w.aggregate}, {"limit", w.limit}, {"sample", w.sample}};
  }
  return j;
}

// ---- built-in profiles ----------------------------------------------------

namespace {

// Row threshold for the sparse kernel at the scale the bundled data runs at.
constexpr double kDeskMinRows = 1000.0;

Rule make_rule(std::string name, std::string when, std::vector<ActionRef> actions, int priority) {
  Rule r;
  r.name = std::move(name);
  r.when = std::move(when);
  r.predicate = parse_rule_predicate(r.when);
  r.actions = std::move(actions);
  r.priority = priority;
  return r;
}

}  // namespace

std::vector<OptimizerProfile> builtin_profiles() {
  std::vector<OptimizerProfile> out;
  out.push_back({"NoOpt", ProfileKind::NoOp, "Executes the plan as written.", std::monostate{}, false});
  out.push_back({"Heuristic-FilterPushdown", ProfileKind::Heuristic,
                 "Classical filter pushdown below joins, repeated to a fixpoint.", std::monostate{}, false});

  RuleSet fig;
  fig.rules.push_back(make_rule("push-and-sparsify", "est_cardinality >= 20000 AND nnz_ratio < 0.3",
                                {{"MLDecompositionPushdown", {}}, {"MatMulDense2Sparse", {{"min_rows", kDeskMinRows}}}}, 10));
  fig.rules.push_back(make_rule("prune-trees", "forest_num_trees >= 1", {{"TreeModelPruning", {}}}, 5));
  out.push_back({"RuleOpt", ProfileKind::RuleBased,
                 "Pushes sparse ML inputs below large joins, switches them to the sparse kernel and prunes trees.",
                 std::move(fig), false});

  DPConfig dp;
  for (const auto& a : builtin_actions()) {
    ActionRef ref{a->name(), {}};
    if (a->name() == "MatMulDense2Sparse") ref.params["min_rows"] = kDeskMinRows;
    dp.actions.push_back(std::move(ref));
  }
  out.push_back({"DP-CostOpt", ProfileKind::CostBasedDP, "Exhaustive search over action sequences of length <= 2.",
                 std::move(dp), false});

  RuleSet s1;
  s1.rules.push_back(make_rule("sparse-matmul", "sparsity > 0.7 AND est_cardinality > 1000",
                               {{"MatMulDense2Sparse", {{"min_rows", kDeskMinRows}}}}, 0));
  out.push_back({"Scenario1-Sparse", ProfileKind::RuleBased, "Switches matmuls over sparse inputs to the sparse kernel.",
                 std::move(s1), false});
  return out;
}

// ---- registry -------------------------------------------------------------

OptimizerRegistry::OptimizerRegistry() : profiles_(builtin_profiles()) {}

std::vector<OptimizerProfile> OptimizerRegistry::list() const {
  std::shared_lock lock(mu_);
  return profiles_;
}

OptimizerProfile OptimizerRegistry::get(const std::string& name) const {
  std::shared_lock lock(mu_);
  for (const auto& p : profiles_)
    if (p.name == name) return p;
  fail(ErrorCode::UnknownOptimizer, "unknown optimizer '" + name + "'", name);
}

bool OptimizerRegistry::contains(const std::string& name) const {
  std::shared_lock lock(mu_);
  return std::any_of(profiles_.begin(), profiles_.end(), [&](const auto& p) { return p.name == name; });
}

void OptimizerRegistry::add(OptimizerProfile p, bool replace) {
  std::unique_lock lock(mu_);
  for (auto& q : profiles_) {
    if (q.name != p.name) continue;
    if (!replace || !q.uploaded) fail(ErrorCode::DuplicateName, "optimizer '" + p.name + "' already exists", p.name);
    q = std::move(p);
    return;
  }
  profiles_.push_back(std::move(p));
}

OptimizerProfile OptimizerRegistry::upload(const json& doc, const ActionRegistry& actions, bool replace) {
  OptimizerProfile p = profile_from_json(doc, actions);
  if (p.name.rfind(kUserPrefix, 0) != 0) p.name = std::string(kUserPrefix) + p.name;
  p.uploaded = true;
  add(p, replace);
  return p;
}

}  // namespace optbench
