#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "optbench/ml_kernels.hpp"
#include "optbench/query_suite.hpp"
#include "optbench/statistics.hpp"
#include "random_plans.hpp"

namespace optbench {
namespace {

using F = MLFunctionId;

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double zero_p = 0.0) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::bernoulli_distribution z(zero_p);
  std::vector<double> v(n);
  for (auto& x : v) x = z(rng) ? 0.0 : u(rng);
  return v;
}

MLAttrs with_model(const std::string& id) {
  MLAttrs a;
  a.model_id = id;
  return a;
}

TreeEnsemble constant_forest(std::vector<double> leaves, ForestAggregation agg) {
  TreeEnsemble e;
  e.aggregation = agg;
  e.num_features = 1;
  for (double v : leaves) e.trees.push_back(DecisionTree{{TreeNode{-1, 0.0, -1, -1, v}}});
  return e;
}

TEST(Kernels, IdentityMatmul) {
  ModelStore m;
  m.add("I", DenseMatrix{3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}});
  MLAttrs a = with_model("I");
  a.weight_shape = std::pair{3, 3};
  std::vector<Value> args{Value(std::vector<double>{1, 2, 3})};
  EXPECT_EQ(eval_ml(F::MatrixMultiply, args, a, m).vec(), (std::vector<double>{1, 2, 3}));
}

TEST(Kernels, SigmoidAndSoftmaxSymmetry) {
  ModelStore m;
  std::vector<Value> zero{Value(0.0)};
  EXPECT_DOUBLE_EQ(eval_ml(F::Sigmoid, zero, {}, m).as_double(), 0.5);
  std::vector<Value> v{Value(std::vector<double>{0, 0})};
  EXPECT_EQ(eval_ml(F::Softmax, v, {}, m).vec(), (std::vector<double>{0.5, 0.5}));
}

TEST(Kernels, SoftmaxSigmoidArgmaxProperties) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 500; ++i) {
    auto v = random_vec(rng, 1 + i % 9);
    for (auto& x : v) x *= 10;
    auto s = softmax(v);
    double sum = 0;
    for (double p : s) {
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 1.0 + 1e-15);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_EQ(std::max_element(s.begin(), s.end()) - s.begin(), std::max_element(v.begin(), v.end()) - v.begin());
    const double y = sigmoid(v[0]);
    EXPECT_GT(y, 0.0);
    EXPECT_LT(y, 1.0);
  }
}

TEST(Kernels, ForestIsAggregateOfTrees) {
  ModelStore m;
  MLAttrs a;
  a.tree_spec = std::make_shared<TreeEnsemble>(constant_forest({1.0, 3.0}, ForestAggregation::Mean));
  std::vector<Value> x{Value(std::vector<double>{0.5})};
  EXPECT_DOUBLE_EQ(eval_ml(F::DecisionForest, x, a, m).as_double(), 2.0);
  a.tree_spec = std::make_shared<TreeEnsemble>(constant_forest({1.0, 3.0, 3.0}, ForestAggregation::Majority));
  EXPECT_DOUBLE_EQ(eval_ml(F::DecisionForest, x, a, m).as_double(), 3.0);

  // Random forests: exact equality with the per-tree oracle.
  std::mt19937_64 rng(9);
  TreeEnsemble e;
  e.num_features = 3;
  for (int t = 0; t < 5; ++t) {
    DecisionTree tree;
    tree.nodes = {{t % 3, 0.1 * t, 1, 2, 0}, {-1, 0, -1, -1, 1.0 + t}, {-1, 0, -1, -1, -2.0 * t}};
    e.trees.push_back(tree);
  }
  a.tree_spec = std::make_shared<TreeEnsemble>(e);
  for (int i = 0; i < 100; ++i) {
    auto v = random_vec(rng, 3);
    double sum = 0;
    for (const auto& t : e.trees) sum += t.predict(v);
    std::vector<Value> args{Value(v)};
    EXPECT_EQ(eval_ml(F::DecisionForest, args, a, m).as_double(), sum / 5.0);
  }
}

TEST(Kernels, MatmulShapeCountsMultiplyAdds) {
  ModelStore m;
  for (auto [k, n] : {std::pair{8, 4}, {3, 7}, {1, 1}, {16, 2}}) {
    m.add("w" + std::to_string(k) + "x" + std::to_string(n), DenseMatrix{k, n, std::vector<double>(k * n, 1.0)});
    MLAttrs a = with_model("w" + std::to_string(k) + "x" + std::to_string(n));
    a.weight_shape = std::pair{k, n};
    double ops = 0;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < k; ++i) ops += 2;  // one multiply, one add
    auto s = get_shape(F::MatrixMultiply, a, m);
    EXPECT_EQ(s.flops, ops);
    EXPECT_EQ(s.num_parameters, k * n);
    EXPECT_EQ(s.out_shape, DType::vector(n));
  }
  m.add("b", BiasVector{{0, 0, 0, 0}});
  MLAttrs b = with_model("b");
  b.bias_shape = 4;
  std::vector<DType> t{DType::vector(4)};
  EXPECT_EQ(get_shape(F::MatrixAddition, b, m, t).num_parameters, 4);
}

TEST(Kernels, ForestAndFusedShapes) {
  ModelStore m;
  MLAttrs a;
  std::vector<double> leaves(10, 1.0);
  a.tree_spec = std::make_shared<TreeEnsemble>(constant_forest(leaves, ForestAggregation::Mean));
  EXPECT_EQ(get_shape(F::DecisionForest, a, m).forest_num_trees, 10);

  MLAttrs f;
  f.layers = {{"w1", "b1", Activation::Relu, 8, 16}, {"w2", "b2", Activation::Identity, 16, 4}};
  EXPECT_EQ(get_shape(F::FusedDnn, f, m).num_parameters, 8 * 16 + 16 + 16 * 4 + 4);
}

TEST(Kernels, ConvWindowSums) {
  Matrix img{3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9}};
  FilterBank ones{1, 2, 2, {1, 1, 1, 1}};
  Matrix expect{2, 2, {12, 16, 24, 28}};
  EXPECT_EQ(conv2d_direct(img, ones).data, expect.data);
  EXPECT_EQ(conv2d_as_matmul_reference(img, ones).data, expect.data);

  FilterBank scale{1, 1, 1, {2.5}};
  auto scaled = conv2d_as_matmul_reference(img, scale);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_DOUBLE_EQ(scaled.data[i], 2.5 * img.data[i]);

  FilterBank big{1, 4, 4, std::vector<double>(16, 1.0)};
  try {
    conv2d_as_matmul_reference(img, big);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Kernels, DenseSparseAgreeAcrossDensities) {
  std::mt19937_64 rng(21);
  for (double density : {0.01, 0.1, 0.5, 1.0}) {
    for (int i = 0; i < 10; ++i) {
      const int m = 1 + i, k = 5 + i, n = 3 + i % 4;
      auto x = random_vec(rng, m * k, 1.0 - density);
      DenseMatrix w{k, n, random_vec(rng, k * n)};
      WeightView v{&w, 0, k};
      auto d = matmul_dense(x, m, v);
      auto s = matmul_sparse(x, m, v);
      ASSERT_EQ(d.size(), s.size());
      for (std::size_t j = 0; j < d.size(); ++j) EXPECT_NEAR(d[j], s[j], 1e-9 * std::max(1.0, std::abs(d[j])));
    }
  }
}

TEST(Kernels, OtherFunctions) {
  ModelStore m;
  m.add("km", KMeansModel{2, 2, {0, 0, 10, 10}});
  m.add("sc", ScalerModel{{0, 0}, {10, 4}});
  m.add("enc", EncoderModel{{"a", "b", "7"}});
  NaiveBayesModel nb;
  nb.log_likelihood["free"] = {std::log(0.01), std::log(0.5)};
  nb.log_likelihood["hello"] = {std::log(0.5), std::log(0.01)};
  nb.log_prior = {std::log(0.5), std::log(0.5)};
  m.add("nb", nb);

  std::vector<Value> near_second{Value(std::vector<double>{9, 8})};
  EXPECT_EQ(eval_ml(F::KMeans, near_second, with_model("km"), m).as_int(), 1);
  EXPECT_EQ(eval_ml(F::MinMaxScaler, near_second, with_model("sc"), m).vec(), (std::vector<double>{0.9, 2.0}));
  MLAttrs enc = with_model("enc");
  enc.out_dim = 3;
  std::vector<Value> seven{Value(std::int64_t{7})};
  EXPECT_EQ(eval_ml(F::OneHotEncoder, seven, enc, m).vec(), (std::vector<double>{0, 0, 1}));
  std::vector<Value> spam{Value("FREE free stuff")}, ham{Value("hello there")};
  EXPECT_EQ(eval_ml(F::NaiveBayes, spam, with_model("nb"), m).as_int(), 1);
  EXPECT_EQ(eval_ml(F::NaiveBayes, ham, with_model("nb"), m).as_int(), 0);

  std::vector<Value> pair{Value(std::vector<double>{0, 0}), Value(std::vector<double>{3, 4})};
  EXPECT_DOUBLE_EQ(eval_ml(F::Distance, pair, {}, m).as_double(), 5.0);
  MLAttrs l1;
  l1.metric = DistanceMetric::L1;
  EXPECT_DOUBLE_EQ(eval_ml(F::Distance, pair, l1, m).as_double(), 7.0);
  std::vector<Value> same{Value(std::vector<double>{1, 2}), Value(std::vector<double>{2, 4})};
  EXPECT_NEAR(eval_ml(F::CosineSim, same, {}, m).as_double(), 1.0, 1e-12);
  std::vector<Value> rel{Value(std::vector<double>{-1, 2})};
  EXPECT_EQ(eval_ml(F::Relu, rel, {}, m).vec(), (std::vector<double>{0, 2}));
  EXPECT_EQ(eval_ml(F::Argmax, rel, {}, m).as_int(), 1);

  std::vector<Value> prompt{Value("is this fraud?"), Value(std::int64_t{3})};
  auto a1 = eval_ml(F::Llm, prompt, {}, m, 1).as_string();
  EXPECT_EQ(a1, eval_ml(F::Llm, prompt, {}, m, 1).as_string());
  EXPECT_TRUE(a1 == "0" || a1 == "1");
}

TEST(Kernels, SignatureChecks) {
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Internal;
  };
  std::vector<DType> none, two_vec{DType::vector(2), DType::vector(3)}, str{DType::string()};
  EXPECT_EQ(code_of([&] { ml_output_type(F::Softmax, {}, none); }), ErrorCode::ArityMismatch);
  EXPECT_EQ(code_of([&] { ml_output_type(F::Distance, {}, two_vec); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { ml_output_type(F::Softmax, {}, str); }), ErrorCode::TypeMismatch);
  EXPECT_EQ(all_ml_functions().size(), static_cast<std::size_t>(kNumMLFunctions));
  for (auto fn : all_ml_functions()) EXPECT_EQ(ml_function_from_name(ml_function_name(fn)), fn);
}

// ---- statistics -------------------------------------------------------------

Catalog one_table(std::size_t rows, double zero_p = 0.0) {
  std::mt19937_64 rng(4);
  Table t{"T", Schema({{"x", DType::float64()}, {"k", DType::int64()}, {"v", DType::vector(6)}}), {{}, {}, {}}};
  for (std::size_t r = 0; r < rows; ++r) {
    t.columns[0].push_back(Value(static_cast<double>(r)));
    t.columns[1].push_back(Value(static_cast<std::int64_t>(r % 10)));
    t.columns[2].push_back(Value(random_vec(rng, 6, zero_p)));
  }
  Catalog c;
  c.add(std::move(t));
  return c;
}

TEST(Statistics, DefaultRangeSelectivity) {
  Catalog c = one_table(1000);
  ModelStore m;
  StatsCollector s(c, m);
  auto t = scan("T", c.get("T").schema);
  EXPECT_EQ(s.cardinality(t), 1000);
  EXPECT_EQ(std::floor(s.cardinality(filter(t, cmp(CompareOp::Gt, col("x"), lit(5.0))))), 333);
  EXPECT_DOUBLE_EQ(predicate_selectivity(*cmp(CompareOp::Eq, col("x"), lit(5.0))), 0.1);
  EXPECT_DOUBLE_EQ(predicate_selectivity(*conj({cmp(CompareOp::Eq, col("x"), lit(5.0)), cmp(CompareOp::Lt, col("x"), lit(1.0))})),
                   0.1 / 3.0);
}

TEST(Statistics, CrossJoinProduct) {
  Catalog c;
  c.add(Table{"A", Schema({{"a", DType::int64()}}), {std::vector<Value>(10, Value(1))}});
  c.add(Table{"B", Schema({{"b", DType::int64()}}), {std::vector<Value>(20, Value(2))}});
  ModelStore m;
  StatsCollector s(c, m);
  EXPECT_EQ(s.cardinality(cross_join(scan("A", c.get("A").schema), scan("B", c.get("B").schema))), 200);
}

TEST(Statistics, FeatureStatsCounts) {
  auto s = feature_stats({{0, 0, 1}, {0, 0, 2}});
  EXPECT_DOUBLE_EQ(s.nnz_ratio, 2.0 / 6.0);
  EXPECT_DOUBLE_EQ(s.zero_cols, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.zero_rows, 0.0);
  auto z = feature_stats({{0, 0}, {0, 0}});
  EXPECT_EQ(z.nnz_ratio, 0.0);
  EXPECT_EQ(z.zero_rows, 1.0);
  EXPECT_EQ(z.zero_cols, 1.0);
  EXPECT_EQ(feature_stats({{1, 2}, {3, 4}}).nnz_ratio, 1.0);
}

TEST(Statistics, CollectCreditCarriesShapeEntries) {
  auto data = generate_query_data("Q_Credit");
  auto plan = build_query("Q_Credit");
  StatsCollector s(data.catalog, data.models);
  auto v = s.collect(plan);
  auto sites = ml_call_sites(plan);
  ASSERT_EQ(sites.size(), 1u);
  const NodeStats* n = v.at(sites[0].node_path);
  ASSERT_NE(n, nullptr);
  ASSERT_EQ(n->ml_calls.size(), 1u);
  const auto& call = sites[0].call->as<MLCall>();
  auto shape = get_shape(call->fn, call->attrs, data.models);
  EXPECT_EQ(n->ml_calls[0].entries.at("flops").value, shape.flops);
  EXPECT_EQ(n->ml_calls[0].entries.at("num_parameters").value, shape.num_parameters);
  EXPECT_EQ(n->ml_calls[0].entries.at("forest_num_trees").source, StatSource::Metadata);
  for (const auto& node : v.nodes)
    for (const auto& [k, e] : node.entries) {
      EXPECT_GE(e.value, 0.0) << k;
      if (k == "est_selectivity" || k == "join_ratio" || k == "nnz_ratio" || k == "zero_rows" || k == "zero_cols")
        EXPECT_LE(e.value, 1.0) << k;
    }
}

TEST(Statistics, RelationalPlanHasNoMLEntries) {
  Catalog c = one_table(50);
  ModelStore m;
  StatsCollector s(c, m);
  auto v = s.collect(filter(scan("T", c.get("T").schema), cmp(CompareOp::Gt, col("x"), lit(1.0))));
  for (const auto& n : v.nodes) {
    EXPECT_TRUE(n.ml_calls.empty());
    for (const auto& [k, e] : n.entries) EXPECT_TRUE(k == "est_cardinality" || k == "est_selectivity") << k;
  }
}

TEST(Statistics, CacheAndDeterminism) {
  auto data = generate_query_data("Q_UC08");
  auto plan = build_query("Q_UC08");
  StatsCollector s(data.catalog, data.models);
  auto first = stats_to_json(s.collect(plan));
  const auto hits = s.cache_hits();
  auto second = stats_to_json(s.collect(plan));
  EXPECT_GT(s.cache_hits(), hits);
  EXPECT_EQ(first, second);
  StatsCollector fresh(data.catalog, data.models);
  EXPECT_EQ(stats_to_json(fresh.collect(plan)), first);
}

TEST(Statistics, SampledSparsityTracksExactCount) {
  for (double zero_p : {0.1, 0.5, 0.8, 0.95}) {
    Catalog c = one_table(4000, zero_p);
    ModelStore m;
    m.add("w", DenseMatrix{6, 2, std::vector<double>(12, 1.0)});
    MLAttrs a = with_model("w");
    a.weight_shape = std::pair{6, 2};
    auto call = ml(F::MatrixMultiply, {col("v")}, a);
    auto owner = project(scan("T", c.get("T").schema), {{call, "y"}});
    std::vector<std::vector<double>> all;
    for (const auto& v : c.get("T").columns[2]) all.push_back(v.vec());
    const double exact = feature_stats(all).nnz_ratio;
    StatsCollector s(c, m, StatsConfig{true, 1024, 42});  // 25.6% of the rows
    EXPECT_NEAR(s.sample_ml_stats(owner, call).nnz_ratio, exact, 0.1) << zero_p;
    StatsCollector full(c, m, StatsConfig{true, 4000, 42});
    EXPECT_DOUBLE_EQ(full.sample_ml_stats(owner, call).nnz_ratio, exact);
  }
}

TEST(Statistics, EstimatorConsistencyOnRandomPlans) {
  auto world = testing::random_world();
  testing::RandomPlanGenerator gen(31, world);
  StatsCollector s(world.catalog, world.models);
  for (int i = 0; i < 300; ++i) {
    auto p = gen.next();
    auto v = s.collect(p);
    visit_preorder(p, [&](const PlanPtr& n, const std::string& path) {
      const double card = s.cardinality(n);
      EXPECT_GE(card, 0.0);
      if (n->kind() == NodeKind::Filter) EXPECT_LE(card, s.cardinality(n->child(0)) + 1e-9);
      if (n->kind() == NodeKind::Join && n->as<JoinOp>()->type == JoinType::Inner) {
        const auto& e = v.at(path)->entries;
        ASSERT_TRUE(e.count("join_ratio"));
        EXPECT_GE(e.at("join_ratio").value, 0.0);
        EXPECT_LE(e.at("join_ratio").value, 1.0);
      }
    });
  }
}

}  // namespace
}  // namespace optbench
