#include <gtest/gtest.h>

#include "optbench/bench.hpp"
#include "optbench/optimizer.hpp"
#include "optbench/query_suite.hpp"

namespace optbench {
namespace {

using F = MLFunctionId;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

/// Generated data, statistics and registries for one suite query.
struct QueryFixture {
  explicit QueryFixture(const std::string& id) : data(generate_query_data(id)), plan(build_query(id)), stats(data.catalog, data.models) {}
  OptimizeContext ctx() { return {data.models, data.catalog, stats, actions}; }
  OptimizeResult run(const std::string& profile) {
    auto c = ctx();
    return optimize(profiles.get(profile), plan, c);
  }

  QueryData data;
  PlanPtr plan;
  StatsCollector stats;
  ActionRegistry actions;
  OptimizerRegistry profiles;
};

std::vector<std::string> applied_names(const DecisionTrace& t) {
  std::vector<std::string> out;
  for (const auto& a : t.applied_sequence) out.push_back(a.action);
  return out;
}

// ---- rule DSL -----------------------------------------------------------------

TEST(RuleDsl, ComparisonsAndPrecedence) {
  StatMap row{{"est_cardinality", {50000}}, {"nnz_ratio", {0.2}}, {"flops", {10}}};
  EXPECT_TRUE(parse_rule_predicate("est_cardinality >= 20000 AND nnz_ratio < 0.3").holds(row));
  EXPECT_FALSE(parse_rule_predicate("est_cardinality >= 20000 AND nnz_ratio > 0.3").holds(row));
  // AND binds tighter: false OR (true AND true)
  EXPECT_TRUE(parse_rule_predicate("flops > 100 OR nnz_ratio < 0.3 AND flops == 10").holds(row));
  EXPECT_FALSE(parse_rule_predicate("(flops > 100 OR nnz_ratio < 0.3) AND flops != 10").holds(row));
  EXPECT_FALSE(parse_rule_predicate("zero_rows <= 1").holds(row));  // absent statistic
  EXPECT_TRUE(parse_rule_predicate("est_cardinality > 1e4").holds(row));
}

TEST(RuleDsl, Rejections) {
  EXPECT_EQ(code_of([] { parse_rule_predicate("rows > 10"); }), ErrorCode::UnknownStatistic);
  EXPECT_EQ(code_of([] { parse_rule_predicate("nnz_ratio <"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_rule_predicate("(nnz_ratio < 1"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_rule_predicate(""); }), ErrorCode::ParseError);
  try {
    parse_rule_predicate("nnz_ratio < 0.3 AND AND");
  } catch (const Error& e) {
    EXPECT_EQ(e.detail(), "20");
  }
}

TEST(RuleDsl, RoundTripText) {
  for (std::string text : {"est_cardinality >= 20000 AND nnz_ratio < 0.3", "(flops > 1 OR sparsity > 0.7) AND input_rows > 10"}) {
    auto p = parse_rule_predicate(text);
    auto q = parse_rule_predicate(p.to_string());
    EXPECT_EQ(p.to_string(), q.to_string());
  }
}

// ---- registry and documents -----------------------------------------------------

TEST(OptimizerRegistry, BuiltinProfiles) {
  OptimizerRegistry reg;
  for (std::string n : {"NoOpt", "Heuristic-FilterPushdown", "RuleOpt", "DP-CostOpt", "Scenario1-Sparse"}) EXPECT_TRUE(reg.contains(n)) << n;
  EXPECT_EQ(reg.get("DP-CostOpt").kind, ProfileKind::CostBasedDP);
  EXPECT_EQ(std::get<DPConfig>(reg.get("DP-CostOpt").definition).depth, 2);
  EXPECT_EQ(code_of([&] { reg.get("nope"); }), ErrorCode::UnknownOptimizer);
}

TEST(OptimizerRegistry, DuplicateAndRoundTrip) {
  OptimizerRegistry reg;
  ActionRegistry actions;
  EXPECT_EQ(code_of([&] { reg.add(reg.get("RuleOpt")); }), ErrorCode::DuplicateName);
  auto doc = profile_to_json(reg.get("RuleOpt"));
  doc["name"] = "mine";
  auto p = reg.upload(doc, actions);
  EXPECT_EQ(p.name, "user/mine");
  EXPECT_TRUE(p.uploaded);
  auto back = profile_to_json(reg.get("user/mine"));
  doc["name"] = "user/mine";
  EXPECT_EQ(back, doc);
  EXPECT_EQ(code_of([&] { reg.upload(doc, actions); }), ErrorCode::DuplicateName);
  EXPECT_NO_THROW(reg.upload(doc, actions, true));
}

TEST(OptimizerRegistry, DocumentValidation) {
  ActionRegistry actions;
  OptimizerRegistry reg;
  auto base = profile_to_json(reg.get("Scenario1-Sparse"));
  auto with = [&](auto edit) {
    auto d = base;
    edit(d);
    return code_of([&] { profile_from_json(d, actions); });
  };
  EXPECT_EQ(with([](auto& d) { d["rules"][0]["when"] = "rows > 1"; }), ErrorCode::UnknownStatistic);
  EXPECT_EQ(with([](auto& d) { d["rules"][0]["actions"] = {"NoSuchAction"}; }), ErrorCode::UnknownAction);
  EXPECT_EQ(with([](auto& d) { d["format"] = "other/1"; }), ErrorCode::ValidationError);
  EXPECT_EQ(with([](auto& d) { d.erase("name"); }), ErrorCode::ValidationError);
  EXPECT_EQ(with([](auto& d) { d["surprise"] = 1; }), ErrorCode::ValidationError);
  try {
    auto d = base;
    d["rules"][0]["when"] = "rows > 1";
    profile_from_json(d, actions);
  } catch (const Error& e) {
    EXPECT_EQ(e.detail(), "/rules/0/when");
  }
}

// ---- rule engine -------------------------------------------------------------------

TEST(RuleEngine, PushAndSparsifyOnScenarioPlan) {
  QueryFixture f("Q_UC08");
  auto r = f.run("RuleOpt");
  EXPECT_EQ(applied_names(r.trace), (std::vector<std::string>{"MLDecompositionPushdown", "MatMulDense2Sparse"}));
  bool fired = false;
  for (const auto& e : r.trace.events) fired = fired || (e.type == "rule_fired" && e.data["rule"] == "push-and-sparsify");
  EXPECT_TRUE(fired);
  bool sparse = false;
  for (const auto& s : ml_call_sites(r.plan)) {
    EXPECT_NE(s.node_path, "0");  // every call moved below the top project
    if (s.call->is_ml(F::MatrixMultiply)) sparse = sparse || s.call->as<MLCall>()->attrs.mode() == KernelMode::Sparse;
  }
  EXPECT_TRUE(sparse);
}

TEST(RuleEngine, EmptyAndFalseRuleSets) {
  QueryFixture f("Q_UC08");
  auto ctx = f.ctx();
  auto empty = run_rule_based(RuleSet{}, f.plan, ctx);
  EXPECT_EQ(empty.plan->hash(), f.plan->hash());
  EXPECT_TRUE(empty.trace.applied_sequence.empty());
  for (const auto& e : empty.trace.events) EXPECT_NE(e.type, "rule_fired");

  RuleSet never;
  Rule r;
  r.name = "never";
  r.when = "est_cardinality > 1e15";
  r.predicate = parse_rule_predicate(r.when);
  r.actions = {{"MatMulDense2Sparse", {}}};
  never.rules.push_back(r);
  auto out = run_rule_based(never, f.plan, ctx);
  EXPECT_EQ(out.plan->hash(), f.plan->hash());
  for (const auto& e : out.trace.events) {
    EXPECT_NE(e.type, "action_applied");
    if (e.data.is_object() && e.data.contains("pass")) EXPECT_EQ(e.data["pass"], 0);
  }
}

TEST(RuleEngine, Deterministic) {
  QueryFixture a("Q_UC08"), b("Q_UC08");
  EXPECT_TRUE(same_decisions(a.run("RuleOpt").trace, b.run("RuleOpt").trace));
  EXPECT_EQ(trace_to_json(a.run("RuleOpt").trace)["events"], trace_to_json(b.run("RuleOpt").trace)["events"]);
}

// ---- cost model ---------------------------------------------------------------------

TEST(CostModel, SingleScan) {
  Catalog c;
  c.add(Table{"T", Schema({{"a", DType::int64()}}), {std::vector<Value>(100, Value(1))}});
  ModelStore m;
  StatsCollector s(c, m);
  CostModel cm;
  EXPECT_DOUBLE_EQ(cm.score(scan("T", c.get("T").schema), s), 100 * cm.weights().scan);
  CostWeights w;
  w.scan = 2.5;
  EXPECT_DOUBLE_EQ(CostModel(w).score(scan("T", c.get("T").schema), s), 250.0);
}

TEST(CostModel, SparseTermScalesWithDensity) {
  auto v = std::make_shared<const std::vector<double>>(std::vector<double>{1, 0, 0, 0, 0, 2, 0, 0, 0, 0});  // nnz 0.2
  Catalog c;
  c.add(Table{"T", Schema({{"v", DType::vector(10)}}), {std::vector<Value>(100, Value(v))}});
  ModelStore m;
  m.add("w", DenseMatrix{10, 4, std::vector<double>(40, 1.0)});
  auto plan_with = [&](KernelMode mode) {
    MLAttrs a;
    a.model_id = "w";
    a.weight_shape = std::pair{10, 4};
    a.kernel_mode = mode;
    return project(scan("T", c.get("T").schema), {{ml(F::MatrixMultiply, {col("v")}, a), "y"}});
  };
  StatsCollector s(c, m);
  CostModel cm;
  const double dense = cm.ml_cost(plan_with(KernelMode::Dense), s);
  EXPECT_DOUBLE_EQ(dense, 100 * 2.0 * 10 * 4);
  EXPECT_NEAR(cm.ml_cost(plan_with(KernelMode::Sparse), s), 0.2 * dense, 1e-9 * dense);
  EXPECT_DOUBLE_EQ(cm.relational_cost(plan_with(KernelMode::Sparse), s), cm.relational_cost(plan_with(KernelMode::Dense), s));
}

// ---- DP ---------------------------------------------------------------------------------

TEST(DP, DepthZeroReturnsInput) {
  QueryFixture f("Q_UC08");
  auto ctx = f.ctx();
  DPConfig cfg = std::get<DPConfig>(f.profiles.get("DP-CostOpt").definition);
  cfg.depth = 0;
  auto r = run_dp_optimizer(cfg, f.plan, ctx);
  EXPECT_EQ(r.plan->hash(), f.plan->hash());
  EXPECT_TRUE(r.trace.applied_sequence.empty());
}

TEST(DP, PushdownAndSparseOnScenarioPlan) {
  QueryFixture f("Q_UC08");
  auto ctx = f.ctx();
  DPConfig cfg;
  cfg.depth = 2;
  cfg.actions = {{"MLDecompositionPushdown", {}}, {"MatMulDense2Sparse", {{"min_rows", kDeskMinRows}}}};
  auto r = run_dp_optimizer(cfg, f.plan, ctx);
  auto names = applied_names(r.trace);
  std::sort(names.begin(), names.end());
  EXPECT_EQ(names, (std::vector<std::string>{"MLDecompositionPushdown", "MatMulDense2Sparse"}));
  EXPECT_LT(r.trace.final_cost, CostModel{}.score(f.plan, f.stats));
  EXPECT_DOUBLE_EQ(r.trace.final_cost, brute_force_min_cost(cfg, f.plan, ctx).best_cost);
}

TEST(DP, MonotoneAndReplayable) {
  for (std::string q : {"Q_Credit", "Q_UC10"}) {
    QueryFixture f(q);
    auto r = f.run("DP-CostOpt");
    EXPECT_LE(r.trace.final_cost, CostModel{}.score(f.plan, f.stats)) << q;
    auto ctx = f.ctx();
    EXPECT_EQ(replay(r.trace, f.plan, ctx)->hash(), r.plan->hash()) << q;
    EXPECT_EQ(r.trace.output_hash, r.plan->hash());
  }
}

TEST(DP, FrontierCapIsHonoured) {
  QueryFixture f("Q_UC03");
  auto ctx = f.ctx();
  DPConfig cfg = std::get<DPConfig>(f.profiles.get("DP-CostOpt").definition);
  cfg.frontier_cap = 1;
  auto r = run_dp_optimizer(cfg, f.plan, ctx);
  EXPECT_LE(r.trace.final_cost, CostModel{}.score(f.plan, f.stats));
  EXPECT_EQ(replay(r.trace, f.plan, ctx)->hash(), r.plan->hash());
}

// ---- all profiles on every query ----------------------------------------------------------

TEST(Profiles, RuleAndHeuristicTracesReplayOnEveryQuery) {
  for (const auto& q : suite_query_ids()) {
    QueryFixture f(q);
    for (std::string p : {"NoOpt", "Heuristic-FilterPushdown", "RuleOpt", "Scenario1-Sparse"}) {
      auto r = f.run(p);
      auto ctx = f.ctx();
      EXPECT_EQ(replay(r.trace, f.plan, ctx)->hash(), r.plan->hash()) << q << " " << p;
      EXPECT_EQ(r.trace.input_hash, f.plan->hash());
      if (p == "NoOpt") EXPECT_EQ(r.plan->hash(), f.plan->hash());
    }
  }
}

TEST(Profiles, ExternalWithoutDefinitionFails) {
  QueryFixture f("Q_UC04");
  auto ctx = f.ctx();
  OptimizerProfile ext{"ext", ProfileKind::External, "", std::monostate{}, false};
  EXPECT_EQ(code_of([&] { optimize(ext, f.plan, ctx); }), ErrorCode::OptimizerFailed);
}

}  // namespace
}  // namespace optbench
