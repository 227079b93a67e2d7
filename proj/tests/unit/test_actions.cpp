#include <gtest/gtest.h>

#include <random>

#include "optbench/bench.hpp"
#include "optbench/executor.hpp"
#include "optbench/ml_kernels.hpp"
#include "optbench/query_suite.hpp"
#include "optbench/rewrite.hpp"
#include "random_plans.hpp"

namespace optbench {
namespace {

using F = MLFunctionId;

struct World {
  Catalog catalog;
  ModelStore models;
};

RewriteResult apply(const RewriteAction& a, const PlanPtr& p, const World& w) {
  StatsCollector stats(w.catalog, w.models);
  RewriteContext ctx{w.models, &w.catalog, &stats};
  return apply_plan_rewrite(a, p, ctx);
}

ResultSet run(const PlanPtr& p, const World& w) { return execute(p, w.catalog, w.models); }

void expect_equivalent(const PlanPtr& a, const PlanPtr& b, const World& w, double tol = 1e-6) {
  auto ra = run(a, w), rb = run(b, w);
  auto rep = compare_results(ra, rb, {}, tol);
  EXPECT_TRUE(rep.equivalent) << rep.message;
}

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double zero_p = 0.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::bernoulli_distribution z(zero_p);
  std::vector<double> v(n);
  for (auto& x : v) x = z(rng) ? 0.0 : u(rng);
  return v;
}

Table vector_table(const std::string& name, const std::string& id, const std::string& v, std::size_t rows, int dim,
                   double zero_p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Table t{name, Schema({{id, DType::int64()}, {v, DType::vector(dim)}}), {{}, {}}};
  for (std::size_t r = 0; r < rows; ++r) {
    t.columns[0].push_back(Value(static_cast<std::int64_t>(r)));
    t.columns[1].push_back(Value(random_vec(rng, dim, zero_p)));
  }
  return t;
}

MLAttrs matrix_attrs(const std::string& id, int k, int n) {
  MLAttrs a;
  a.model_id = id;
  a.weight_shape = std::pair{k, n};
  return a;
}

ExprPtr layer(ExprPtr x, const std::string& w, const std::string& b, int k, int n, std::optional<F> act) {
  MLAttrs ba;
  ba.model_id = b;
  ba.bias_shape = n;
  ExprPtr e = ml(F::MatrixAddition, {ml(F::MatrixMultiply, {std::move(x)}, matrix_attrs(w, k, n))}, std::move(ba));
  return act ? ml(*act, {e}) : e;
}

ExprPtr first0(ExprPtr v) { return func("element", {std::move(v), lit(Value(std::int64_t{0}))}); }

ActionPtr builtin(const std::string& name) { return action_template(name); }

// ---- custom actions exercising the applier ----------------------------------

class NeverMatch final : public ActionTemplate<NeverMatch> {
 public:
  using ActionTemplate::ActionTemplate;
  std::string_view template_id() const override { return "test/never"; }
  std::string_view summary() const override { return "matches nothing"; }
};

class BumpLimits final : public ActionTemplate<BumpLimits> {
 public:
  using ActionTemplate::ActionTemplate;
  std::string_view template_id() const override { return "test/bump"; }
  std::string_view summary() const override { return "limit n -> n+1"; }
  bool matches_plan(const PlanPtr& n, RewriteContext&) const override { return n->kind() == NodeKind::Limit; }
  PlanPtr rewrite_plan(const PlanPtr& n, RewriteContext&) const override { return limit(n->child(0), n->as<LimitOp>()->n + 1); }
};

class BreakFilters final : public ActionTemplate<BreakFilters> {
 public:
  using ActionTemplate::ActionTemplate;
  std::string_view template_id() const override { return "test/break"; }
  std::string_view summary() const override { return "emits an unresolved column"; }
  bool matches_plan(const PlanPtr& n, RewriteContext&) const override { return n->kind() == NodeKind::Filter; }
  PlanPtr rewrite_plan(const PlanPtr& n, RewriteContext&) const override {
    return filter(n->child(0), cmp(CompareOp::Gt, col("no_such_column"), lit(1)));
  }
};

TEST(Applier, UnmatchedActionIsIdentity) {
  NeverMatch never("never", {});
  World w;
  w.models = build_models("Q_UC08");
  auto q = build_query("Q_UC08");
  auto r = apply(never, q, w);
  EXPECT_FALSE(r.modified);
  EXPECT_TRUE(r.deltas.empty());
  EXPECT_TRUE(structurally_equal(*r.plan, *q));
}

TEST(Applier, RootAndGrandchildInOneCall) {
  World w;
  w.catalog.add(vector_table("T", "id", "v", 10, 2, 0.0, 1));
  auto p = limit(project(limit(scan("T", w.catalog.get("T").schema), 5), {{col("id"), "id"}}), 3);
  BumpLimits bump("bump", {});
  auto r = apply(bump, p, w);
  EXPECT_TRUE(r.modified);
  ASSERT_EQ(r.deltas.size(), 2u);
  EXPECT_EQ(r.deltas[0].node_path, "0");
  EXPECT_EQ(r.deltas[1].node_path, "0.0.0");
  EXPECT_EQ(r.plan->as<LimitOp>()->n, 4);
  EXPECT_EQ(node_at(r.plan, "0.0.0")->as<LimitOp>()->n, 6);
  EXPECT_EQ(p->as<LimitOp>()->n, 3);  // input untouched
}

TEST(Applier, InvalidRewriteIsReported) {
  World w;
  w.catalog.add(vector_table("T", "id", "v", 4, 2, 0.0, 1));
  auto p = filter(scan("T", w.catalog.get("T").schema), cmp(CompareOp::Gt, col("id"), lit(1)));
  BreakFilters brk("break", {});
  try {
    apply(brk, p, w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RewriteProducedInvalidPlan);
    EXPECT_EQ(e.detail(), "0");
  }
}

// ---- MatMulDense2Sparse -------------------------------------------------------

World sparse_world(std::size_t rows, double zero_p) {
  World w;
  w.catalog.add(vector_table("T", "id", "v", rows, 10, zero_p, 2));
  std::mt19937_64 rng(3);
  w.models.add("w", DenseMatrix{10, 3, random_vec(rng, 30)});
  return w;
}

PlanPtr matmul_plan(const World& w) {
  return project(scan("T", w.catalog.get("T").schema),
                 {{col("id"), "id"}, {ml(F::MatrixMultiply, {col("v")}, matrix_attrs("w", 10, 3)), "y"}});
}

TEST(Dense2Sparse, SparseInputSwitchesKernel) {
  World w = sparse_world(2000, 0.85);
  auto p = matmul_plan(w);
  auto a = builtin("MatMulDense2Sparse")->with_params("d2s", {{"min_rows", 1000}});
  auto r = apply(*a, p, w);
  ASSERT_TRUE(r.modified);
  MLAttrs sparse = matrix_attrs("w", 10, 3);
  sparse.kernel_mode = KernelMode::Sparse;
  auto expected = project(scan("T", w.catalog.get("T").schema),
                          {{col("id"), "id"}, {ml(F::MatrixMultiply, {col("v")}, sparse), "y"}});
  EXPECT_TRUE(structurally_equal(*r.plan, *expected));
  ASSERT_EQ(r.deltas.size(), 1u);
  EXPECT_EQ(r.deltas[0].node_path, "0");
  expect_equivalent(p, r.plan, w, 1e-9);
  EXPECT_FALSE(apply(*a, r.plan, w).modified);  // idempotent
}

TEST(Dense2Sparse, DenseInputStaysDense) {
  World w = sparse_world(2000, 0.1);
  auto a = builtin("MatMulDense2Sparse")->with_params("d2s", {{"min_rows", 1000}});
  EXPECT_FALSE(apply(*a, matmul_plan(w), w).modified);
}

/// Default thresholds: 0.7 sparsity and 10^6 rows. Every row shares one
/// feature vector with 2 of 10 entries non-zero, so the sampled nnz_ratio is 0.2.
TEST(Dense2Sparse, DefaultThresholdsAtTwoMillionRows) {
  auto shared = std::make_shared<const std::vector<double>>(std::vector<double>{0, 1.5, 0, 0, 0, 0, -2, 0, 0, 0});
  auto make = [&](std::size_t rows) {
    World w;
    Table t{"T", Schema({{"v", DType::vector(10)}}), {std::vector<Value>(rows, Value(shared))}};
    w.catalog.add(std::move(t));
    w.models.add("w", DenseMatrix{10, 3, std::vector<double>(30, 1.0)});
    return w;
  };
  auto plan = [](const World& w) {
    return project(scan("T", w.catalog.get("T").schema), {{ml(F::MatrixMultiply, {col("v")}, matrix_attrs("w", 10, 3)), "y"}});
  };
  auto d2s = make_matmul_dense2sparse();
  EXPECT_EQ(d2s->param("sparsity_threshold"), 0.7);
  EXPECT_EQ(d2s->param("min_rows"), 1e6);
  {
    World big = make(2'000'000);
    auto r = apply(*d2s, plan(big), big);
    EXPECT_TRUE(r.modified);
  }
  World small = make(500'000);
  EXPECT_FALSE(apply(*d2s, plan(small), small).modified);
}

TEST(Dense2Sparse, UC08OutputsUnchanged) {
  auto data = generate_query_data("Q_UC08");
  World w{data.catalog, data.models};
  auto q = build_query("Q_UC08");
  auto a = builtin("MatMulDense2Sparse")->with_params("d2s", {{"min_rows", kDeskMinRows}});
  auto r = apply(*a, q, w);
  ASSERT_TRUE(r.modified);
  expect_equivalent(q, r.plan, w, 1e-9);
}

// ---- MatMul2Relation ----------------------------------------------------------

World dot_world(std::vector<std::vector<double>> xs) {
  World w;
  Table t{"X", Schema({{"id", DType::int64()}, {"x", DType::vector(3)}}), {{}, {}}};
  for (std::size_t i = 0; i < xs.size(); ++i) {
    t.columns[0].push_back(Value(static_cast<std::int64_t>(i)));
    t.columns[1].push_back(Value(xs[i]));
  }
  w.catalog.add(std::move(t));
  w.models.add("w", DenseMatrix{3, 1, {4, 5, 6}});
  w.catalog.add_model_tables(w.models);
  return w;
}

PlanPtr dot_plan(const World& w) {
  return project(scan("X", w.catalog.get("X").schema),
                 {{col("id"), "id"}, {first0(ml(F::MatrixMultiply, {col("x")}, matrix_attrs("w", 3, 1))), "y"}});
}

TEST(MatMul2Relation, DotProductAsJoinAndSum) {
  World w = dot_world({{1, 2, 3}, {0, 0, 0}});
  auto r = apply(*builtin("MatMul2Relation"), dot_plan(w), w);
  ASSERT_TRUE(r.modified);
  auto res = run(r.plan, w);
  ASSERT_EQ(res.row_count, 2u);
  const auto yi = *res.schema.find("y"), ii = *res.schema.find("id");
  for (std::size_t row = 0; row < 2; ++row)
    EXPECT_DOUBLE_EQ(res.at(row, yi).as_double(), res.at(row, ii).as_int() == 0 ? 32.0 : 0.0);
}

TEST(MatMul2Relation, HundredRowEquivalence) {
  std::mt19937_64 rng(8);
  std::vector<std::vector<double>> xs;
  for (int i = 0; i < 100; ++i) xs.push_back(random_vec(rng, 3));
  World w = dot_world(xs);
  auto p = dot_plan(w);
  auto r = apply(*builtin("MatMul2Relation"), p, w);
  ASSERT_TRUE(r.modified);
  expect_equivalent(p, r.plan, w);
}

// ---- DecisionForestUDF2Relation -------------------------------------------------

TreeEnsemble stump_forest(std::vector<std::pair<double, double>> leaves) {
  TreeEnsemble e;
  e.num_features = 1;
  for (auto [l, r] : leaves) e.trees.push_back(DecisionTree{{{0, 0.5, 1, 2, 0}, {-1, 0, -1, -1, l}, {-1, 0, -1, -1, r}}});
  return e;
}

World forest_world(const TreeEnsemble& e) {
  World w;
  Table t{"X", Schema({{"id", DType::int64()}, {"x", DType::vector(1)}}), {{}, {}}};
  for (int i = 0; i < 20; ++i) {
    t.columns[0].push_back(Value(std::int64_t{i}));
    t.columns[1].push_back(Value(std::vector<double>{i / 20.0}));
  }
  w.catalog.add(std::move(t));
  w.models.add("f", e);
  w.catalog.add_model_tables(w.models);
  return w;
}

PlanPtr forest_plan(const World& w, F fn) {
  MLAttrs a;
  a.model_id = "f";
  a.tree_spec = std::make_shared<TreeEnsemble>(w.models.get_as<TreeEnsemble>("f"));
  return project(scan("X", w.catalog.get("X").schema), {{col("id"), "id"}, {ml(fn, {col("x")}, a), "y"}});
}

TEST(Forest2Relation, MeanOfTwoTrees) {
  World w = forest_world(stump_forest({{1.0, 1.0}, {3.0, 3.0}}));
  auto r = apply(*builtin("DecisionForestUDF2Relation"), forest_plan(w, F::DecisionForest), w);
  ASSERT_TRUE(r.modified);
  auto res = run(r.plan, w);
  ASSERT_EQ(res.row_count, 20u);
  for (std::size_t i = 0; i < res.row_count; ++i) EXPECT_DOUBLE_EQ(res.at(i, *res.schema.find("y")).as_double(), 2.0);
}

TEST(Forest2Relation, OneTreeForestMatchesTreeCall) {
  World w = forest_world(stump_forest({{-1.0, 4.0}}));
  auto r = apply(*builtin("DecisionForestUDF2Relation"), forest_plan(w, F::DecisionForest), w);
  ASSERT_TRUE(r.modified);
  expect_equivalent(forest_plan(w, F::DecisionTree), r.plan, w);
}

TEST(Forest2Relation, FlightsPredictionsUnchanged) {
  auto data = generate_query_data("Q_Flights");
  World w{data.catalog, data.models};
  auto q = build_query("Q_Flights");
  auto r = apply(*builtin("DecisionForestUDF2Relation"), q, w);
  ASSERT_TRUE(r.modified);
  EXPECT_GE(run(q, w).row_count, 1000u);
  expect_equivalent(q, r.plan, w);
}

// ---- ConvNN2MatMul ----------------------------------------------------------------

World conv_world(Matrix img, FilterBank fb) {
  World w;
  w.catalog.add(Table{"I", Schema({{"img", DType::matrix(img.rows, img.cols)}}), {{Value(std::move(img))}}});
  w.models.add("fb", std::move(fb));
  return w;
}

PlanPtr conv_plan(const World& w) {
  const auto& fb = w.models.get_as<FilterBank>("fb");
  MLAttrs a;
  a.model_id = "fb";
  a.filter_spec = FilterSpec{fb.count, fb.height, fb.width};
  return project(scan("I", w.catalog.get("I").schema), {{ml(F::Conv2d, {col("img")}, a), "maps"}});
}

TEST(Conv2MatMul, MatchesReferenceConvolution) {
  Matrix img{3, 3, {1, -2, 3, 0.5, 5, 6, 7, 8, -9}};
  FilterBank fb{1, 2, 2, {0.25, -1, 2, 0.5}};
  World w = conv_world(img, fb);
  auto p = conv_plan(w);
  auto r = apply(*builtin("ConvNN2MatMul"), p, w);
  ASSERT_TRUE(r.modified);
  const Matrix expect = conv2d_as_matmul_reference(img, fb);
  const auto res = run(r.plan, w);
  const Matrix& got = res.at(0, 0).mat();
  ASSERT_EQ(got.data.size(), expect.data.size());
  for (std::size_t i = 0; i < got.data.size(); ++i) EXPECT_NEAR(got.data[i], expect.data[i], 1e-9 * std::max(1.0, std::abs(expect.data[i])));
  EXPECT_FALSE(apply(*builtin("ConvNN2MatMul"), r.plan, w).modified);  // idempotent
}

TEST(Conv2MatMul, IdentityFilter) {
  Matrix img{2, 3, {1, 2, 3, 4, 5, 6}};
  World w = conv_world(img, FilterBank{1, 1, 1, {1.0}});
  auto r = apply(*builtin("ConvNN2MatMul"), conv_plan(w), w);
  ASSERT_TRUE(r.modified);
  EXPECT_EQ(run(r.plan, w).at(0, 0).mat().data, img.data);
}

TEST(Conv2MatMul, IDNet1KeepsTheSameRows) {
  auto data = generate_query_data("Q_IDNet1");
  World w{data.catalog, data.models};
  auto q = build_query("Q_IDNet1");
  auto r = apply(*builtin("ConvNN2MatMul"), q, w);
  ASSERT_TRUE(r.modified);
  auto a = run(q, w), b = run(r.plan, w);
  EXPECT_EQ(result_digest(a), result_digest(b));
}

// ---- NN fusion ---------------------------------------------------------------------

World nn_world() {
  World w;
  w.catalog.add(vector_table("T", "id", "v", 64, 4, 0.0, 5));
  std::mt19937_64 rng(6);
  w.models.add("w1", DenseMatrix{4, 5, random_vec(rng, 20)});
  w.models.add("b1", BiasVector{random_vec(rng, 5)});
  w.models.add("w2", DenseMatrix{5, 3, random_vec(rng, 15)});
  w.models.add("b2", BiasVector{random_vec(rng, 3)});
  w.models.add("w3", DenseMatrix{3, 2, random_vec(rng, 6)});
  w.models.add("b3", BiasVector{random_vec(rng, 2)});
  return w;
}

PlanPtr nn_plan(const World& w, int layers) {
  ExprPtr h = layer(col("v"), "w1", "b1", 4, 5, F::Relu);
  if (layers >= 2) h = layer(h, "w2", "b2", 5, 3, layers == 2 ? std::optional(F::Softmax) : std::optional(F::Sigmoid));
  if (layers >= 3) h = layer(h, "w3", "b3", 3, 2, std::nullopt);
  return project(scan("T", w.catalog.get("T").schema), {{col("id"), "id"}, {h, "y"}});
}

const MLCall* find_fused(const PlanPtr& p) {
  const MLCall* out = nullptr;
  visit_preorder(p, [&](const PlanPtr& n, const std::string&) {
    for (const auto& e : n->expressions())
      visit_ml_calls(e, "", [&](const ExprPtr& c, const std::string&) {
        if (c->is_ml(F::FusedDnn)) out = c->as<MLCall>();
      });
  });
  return out;
}

TEST(Fusion, TwoLayerChainMatchesLayerByLayer) {
  World w = nn_world();
  auto p = nn_plan(w, 2);
  auto r = apply(*builtin("Fuse2TorchNN"), p, w);
  ASSERT_TRUE(r.modified);
  ASSERT_NE(find_fused(r.plan), nullptr);
  expect_equivalent(p, r.plan, w, 1e-6);
  EXPECT_FALSE(apply(*builtin("Fuse2TorchNN"), r.plan, w).modified);  // idempotent
}

TEST(Fusion, SingleLayerBelowThreshold) {
  World w = nn_world();
  EXPECT_FALSE(apply(*builtin("Fuse2TorchNN"), nn_plan(w, 1), w).modified);
  EXPECT_FALSE(apply(*builtin("MultiLayerUDF2TorchNN"), nn_plan(w, 1), w).modified);
}

TEST(Fusion, ThreeLayerChainKeepsOrder) {
  World w = nn_world();
  auto p = nn_plan(w, 3);
  auto r = apply(*builtin("MultiLayerUDF2TorchNN"), p, w);
  ASSERT_TRUE(r.modified);
  const MLCall* fused = find_fused(r.plan);
  ASSERT_NE(fused, nullptr);
  ASSERT_EQ(fused->attrs.layers.size(), 3u);
  EXPECT_EQ(fused->attrs.layers[0].in_dim, 4);
  for (std::size_t i = 0; i + 1 < 3; ++i) EXPECT_EQ(fused->attrs.layers[i].out_dim, fused->attrs.layers[i + 1].in_dim);
  EXPECT_EQ(fused->attrs.layers[0].weight_model, "w1");
  EXPECT_EQ(fused->attrs.layers[2].weight_model, "w3");
  expect_equivalent(p, r.plan, w, 1e-6);
  EXPECT_FALSE(apply(*builtin("MultiLayerUDF2TorchNN"), r.plan, w).modified);
}

// ---- MLDecompositionPushdown ----------------------------------------------------------

World pushdown_world() {
  World w = nn_world();
  w.catalog.add(vector_table("R", "c", "g", 10, 4, 0.0, 9));
  return w;
}

TEST(DecompositionPushdown, InferenceMovesBelowCrossJoin) {
  World w = pushdown_world();
  auto j = cross_join(scan("T", w.catalog.get("T").schema), scan("R", w.catalog.get("R").schema));
  auto p = project(j, {{col("id"), "id"}, {col("c"), "c"}, {first0(layer(layer(col("v"), "w1", "b1", 4, 5, F::Relu), "w2", "b2", 5, 3, F::Sigmoid)), "y"}});
  auto r = apply(*builtin("MLDecompositionPushdown"), p, w);
  ASSERT_TRUE(r.modified);
  auto before = run(p, w), after = run(r.plan, w);
  EXPECT_TRUE(compare_results(before, after).equivalent);
  EXPECT_LT(after.stats.ml_invocations, before.stats.ml_invocations);
  for (const auto& s : ml_call_sites(r.plan)) EXPECT_NE(s.node_path, "0");
}

TEST(DecompositionPushdown, TwoSidedNonAffineCallStays) {
  World w = pushdown_world();
  auto j = cross_join(scan("T", w.catalog.get("T").schema), scan("R", w.catalog.get("R").schema));
  auto p = project(j, {{col("id"), "id"}, {ml(F::Distance, {col("v"), col("g")}), "d"}});
  EXPECT_FALSE(apply(*builtin("MLDecompositionPushdown"), p, w).modified);
}

// ---- MLFactorization ------------------------------------------------------------------

World factor_world(std::vector<double> weights) {
  World w;
  w.catalog.add(Table{"L", Schema({{"lid", DType::int64()}, {"x1", DType::vector(2)}}),
                      {{Value(std::int64_t{1})}, {Value(std::vector<double>{1, 2})}}});
  w.catalog.add(Table{"R", Schema({{"rid", DType::int64()}, {"x2", DType::float64()}}), {{Value(std::int64_t{1})}, {Value(3.0)}}});
  w.models.add("W", DenseMatrix{3, 1, std::move(weights)});
  w.models.add("b", BiasVector{{0.5}});
  return w;
}

PlanPtr factor_plan(const World& w) {
  auto j = join(scan("L", w.catalog.get("L").schema), scan("R", w.catalog.get("R").schema),
                cmp(CompareOp::Eq, col("lid"), col("rid")));
  MLAttrs b;
  b.model_id = "b";
  b.bias_shape = 1;
  auto xw = ml(F::MatrixMultiply, {func("concat", {col("x1"), col("x2")})}, matrix_attrs("W", 3, 1));
  return project(j, {{first0(ml(F::MatrixAddition, {xw}, b)), "y"}});
}

TEST(Factorization, PartialsSumToFullProduct) {
  World w = factor_world({1, 1, 1});
  auto p = factor_plan(w);
  auto r = apply(*builtin("MLFactorization"), p, w);
  ASSERT_TRUE(r.modified);
  EXPECT_DOUBLE_EQ(run(r.plan, w).at(0, 0).as_double(), 6.5);
  EXPECT_DOUBLE_EQ(run(p, w).at(0, 0).as_double(), 6.5);
  // partials 3 and 3
  MLAttrs left = matrix_attrs("W", 3, 1), right = left;
  left.weight_rows = std::pair{0, 2};
  right.weight_rows = std::pair{2, 3};
  std::vector<Value> x1{Value(std::vector<double>{1, 2})}, x2{Value(std::vector<double>{3})};
  EXPECT_DOUBLE_EQ(eval_ml(F::MatrixMultiply, x1, left, w.models).vec()[0], 3.0);
  EXPECT_DOUBLE_EQ(eval_ml(F::MatrixMultiply, x2, right, w.models).vec()[0], 3.0);
}

TEST(Factorization, ZeroBlockSide) {
  World w = factor_world({1, 1, 0});
  auto r = apply(*builtin("MLFactorization"), factor_plan(w), w);
  ASSERT_TRUE(r.modified);
  EXPECT_DOUBLE_EQ(run(r.plan, w).at(0, 0).as_double(), 3.5);
  MLAttrs right = matrix_attrs("W", 3, 1);
  right.weight_rows = std::pair{2, 3};
  std::vector<Value> x2{Value(std::vector<double>{3})};
  EXPECT_EQ(eval_ml(F::MatrixMultiply, x2, right, w.models).vec()[0], 0.0);
}

TEST(Factorization, ThreeWayJoinPartialsBelowJoin) {
  World w;
  std::mt19937_64 rng(12);
  for (const std::string t : {"A", "B", "C"}) {
    std::string k = std::string(1, static_cast<char>(std::tolower(t[0]))) + "_id";
    std::string x = std::string(1, static_cast<char>(std::tolower(t[0]))) + "_x";
    Table tab{t, Schema({{k, DType::int64()}, {x, DType::float64()}}), {{}, {}}};
    for (int i = 0; i < 20; ++i) {
      tab.columns[0].push_back(Value(std::int64_t{i % 7}));
      tab.columns[1].push_back(Value(random_vec(rng, 1)[0]));
    }
    w.catalog.add(std::move(tab));
  }
  w.models.add("W", DenseMatrix{3, 2, random_vec(rng, 6)});
  auto ab = join(scan("A", w.catalog.get("A").schema), scan("B", w.catalog.get("B").schema),
                 cmp(CompareOp::Eq, col("a_id"), col("b_id")));
  auto abc = join(ab, scan("C", w.catalog.get("C").schema), cmp(CompareOp::Eq, col("b_id"), col("c_id")));
  auto p = project(abc, {{col("a_id"), "a_id"},
                         {ml(F::MatrixMultiply, {func("concat", {col("a_x"), col("b_x"), col("c_x")})}, matrix_attrs("W", 3, 2)), "y"}});
  auto r = apply(*builtin("MLFactorization"), p, w);
  ASSERT_TRUE(r.modified);
  expect_equivalent(p, r.plan, w);
  int partials = 0;
  for (const auto& s : ml_call_sites(r.plan))
    if (s.call->is_ml(F::MatrixMultiply)) {
      ++partials;
      EXPECT_GT(s.node_path.size(), std::string("0.0").size()) << s.node_path;  // below the top join at 0.0
    }
  EXPECT_EQ(partials, 2);
}

// ---- TreeModelPruning -------------------------------------------------------------------

TEST(TreePruning, BoundReplacesRootWithRightChild) {
  DecisionTree t{{{0, 3.0, 1, 2, 0}, {-1, 0, -1, -1, 1.0}, {1, 5.0, 3, 4, 0}, {-1, 0, -1, -1, 2.0}, {-1, 0, -1, -1, 3.0}}};
  TreeEnsemble e;
  e.trees = {t};
  e.num_features = 2;
  World w;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  Table tab{"T", Schema({{"x", DType::float64()}, {"y", DType::float64()}, {"z", DType::float64()}}), {{}, {}, {}}};
  for (int i = 0; i < 1000; ++i)
    for (auto& c : tab.columns) c.push_back(Value(u(rng)));
  w.catalog.add(std::move(tab));
  w.models.add("t", e);
  MLAttrs a;
  a.model_id = "t";
  a.tree_spec = std::make_shared<TreeEnsemble>(e);
  auto call = ml(F::DecisionTree, {func("concat", {col("x"), col("y")})}, a);
  auto scan_t = scan("T", w.catalog.get("T").schema);

  auto p = project(filter(scan_t, cmp(CompareOp::Gt, col("x"), lit(5.0))), {{call, "s"}});
  auto r = apply(*builtin("TreeModelPruning"), p, w);
  ASSERT_TRUE(r.modified);
  const auto& pruned = r.plan->as<ProjectOp>()->items[0].expr->as<MLCall>()->attrs.tree_spec->trees[0];
  ASSERT_EQ(pruned.nodes.size(), 3u);
  EXPECT_EQ(pruned.nodes[0].feature, 1);
  EXPECT_EQ(pruned.nodes[0].threshold, 5.0);
  std::uniform_real_distribution<double> above(5.0 + 1e-9, 10.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> x{above(rng), u(rng)};
    EXPECT_EQ(pruned.predict(x), t.predict(x));
  }
  expect_equivalent(p, r.plan, w, 0.0);

  auto unrelated = project(filter(scan_t, cmp(CompareOp::Gt, col("z"), lit(5.0))), {{call, "s"}});
  EXPECT_FALSE(apply(*builtin("TreeModelPruning"), unrelated, w).modified);
}

TEST(TreePruning, ExpediaShrinksAndAgrees) {
  auto data = generate_query_data("Q_Expedia");
  World w{data.catalog, data.models};
  auto q = build_query("Q_Expedia");
  auto r = apply(*builtin("TreeModelPruning"), q, w);
  ASSERT_TRUE(r.modified);
  auto size_of = [](const PlanPtr& p) {
    for (const auto& s : ml_call_sites(p)) return s.call->as<MLCall>()->attrs.tree_spec->node_count();
    return std::size_t{0};
  };
  EXPECT_LT(size_of(r.plan), size_of(q));
  expect_equivalent(q, r.plan, w, 0.0);
}

// ---- registry ----------------------------------------------------------------------------

TEST(ActionRegistry, NineBuiltinsInOrder) {
  const std::vector<std::string> names{"MatMulDense2Sparse",      "DecisionForestUDF2Relation", "MatMul2Relation",
                                        "ConvNN2MatMul",           "MultiLayerUDF2TorchNN",      "MLDecompositionPushdown",
                                        "Fuse2TorchNN",            "MLFactorization",            "TreeModelPruning"};
  auto list = builtin_actions();
  ASSERT_EQ(list.size(), names.size());
  for (std::size_t i = 0; i < names.size(); ++i) EXPECT_EQ(list[i]->name(), names[i]);
  ActionRegistry reg;
  EXPECT_EQ(reg.list().size(), names.size());
  for (const auto& n : names) EXPECT_TRUE(reg.contains(n)) << n;
}

TEST(ActionRegistry, UploadParameterization) {
  ActionRegistry reg;
  nlohmann::json doc{{"format", "optbench-action/1"},
                     {"name", "sparse-small"},
                     {"template", "MatMulDense2Sparse"},
                     {"params", {{"min_rows", 10}}},
                     {"description", "desk scale"}};
  auto a = reg.upload(doc);
  EXPECT_EQ(a->name(), "user/sparse-small");
  EXPECT_EQ(a->param("min_rows"), 10);
  EXPECT_EQ(a->param("sparsity_threshold"), 0.7);
  EXPECT_EQ(reg.get("user/sparse-small").get(), a.get());
  auto code_of = [&](nlohmann::json d) {
    try {
      reg.upload(d);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Internal;
  };
  EXPECT_EQ(code_of(doc), ErrorCode::DuplicateName);
  auto bad = doc;
  bad["name"] = "x";
  bad["template"] = "NoSuchAction";
  EXPECT_EQ(code_of(bad), ErrorCode::UnknownAction);
  bad = doc;
  bad["name"] = "y";
  bad["params"] = {{"nope", 1}};
  EXPECT_EQ(code_of(bad), ErrorCode::ValidationError);
  EXPECT_NO_THROW(reg.upload(doc, true));
}

// ---- semantics on random plans -------------------------------------------------------------

TEST(Semantics, RandomPlansKeepTheirResults) {
  auto world = testing::random_world();
  World w{world.catalog, world.models};
  testing::RandomPlanGenerator gen(41, world, {6, 2, false});
  std::vector<ActionPtr> actions;
  for (const auto& a : builtin_actions())
    actions.push_back(a->name() == "MatMulDense2Sparse" ? a->with_params(a->name(), {{"min_rows", 0}}) : a);
  actions.push_back(make_filter_pushdown());
  std::map<std::string, int> fired;
  for (int i = 0; i < 150; ++i) {
    auto p = gen.next();
    const auto base = run(p, w);
    for (const auto& a : actions) {
      RewriteResult r;
      try {
        r = apply(*a, p, w);
      } catch (const Error& e) {
        ASSERT_TRUE(e.code() == ErrorCode::NotApplicable || e.code() == ErrorCode::UnsupportedConvConfig) << e.what();
        continue;
      }
      if (!r.modified) continue;
      ++fired[a->name()];
      auto rep = compare_results(base, run(r.plan, w));
      EXPECT_TRUE(rep.equivalent) << a->name() << " on\n" << plan_to_string(*p) << rep.message;
    }
  }
  EXPECT_GE(fired.size(), 5u);
}

}  // namespace
}  // namespace optbench
