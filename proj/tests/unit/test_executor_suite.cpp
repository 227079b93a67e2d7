#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "optbench/bench.hpp"
#include "optbench/executor.hpp"
#include "optbench/query_suite.hpp"

namespace optbench {
namespace {

using F = MLFunctionId;

Catalog abc() {
  Catalog c;
  c.add(Table{"T", Schema({{"a", DType::int64()}, {"g", DType::string()}, {"x", DType::float64()}}),
              {{Value(1), Value(2), Value(3), Value(2)}, {Value("p"), Value("q"), Value("p"), Value("p")}, {Value(0.5), Value(1.5), Value(2.5), Value(4.0)}}});
  return c;
}

std::multiset<std::int64_t> ints(const ResultSet& r, const std::string& column) {
  std::multiset<std::int64_t> out;
  for (std::size_t i = 0; i < r.row_count; ++i) out.insert(r.at(i, r.schema.index_of(column)).as_int());
  return out;
}

TEST(Executor, FilterKeepsMatchingRows) {
  Catalog c;
  c.add(Table{"T", Schema({{"a", DType::int64()}}), {{Value(1), Value(2), Value(3)}}});
  ModelStore m;
  auto r = execute(filter(scan("T", c.get("T").schema), cmp(CompareOp::Gt, col("a"), lit(1))), c, m);
  EXPECT_EQ(ints(r, "a"), (std::multiset<std::int64_t>{2, 3}));
  ASSERT_EQ(r.stats.operators.size(), 2u);
  EXPECT_EQ(r.stats.operators[0].rows_in, 3u);
  EXPECT_EQ(r.stats.operators[0].rows_out, 2u);
  EXPECT_EQ(r.stats.ml_invocations, 0u);
}

TEST(Executor, VotingOverTwoReferenceSets) {
  Catalog c;
  auto img = [](double v) { return Value(std::vector<double>{v, 1 - v}); };
  c.add(Table{"inp", Schema({{"license_number", DType::int64()}, {"image", DType::vector(2)}}), {{Value(1), Value(2)}, {img(0.1), img(0.7)}}});
  c.add(Table{"r1", Schema({{"ref_image1", DType::vector(2)}}), {{img(0.2), img(0.3)}}});
  c.add(Table{"r2", Schema({{"ref_image2", DType::vector(2)}}), {{img(0.4), img(0.5)}}});
  ModelStore m;
  auto pairs = cross_join(cross_join(scan("inp", c.get("inp").schema), scan("r1", c.get("r1").schema)), scan("r2", c.get("r2").schema));
  auto vote = func("to_double", {ml(F::Llm, {lit(Value("same person?")), col("image"), col("ref_image1"), col("ref_image2")})});
  auto plan = aggregate(project(pairs, {{col("license_number"), "license_number"}, {vote, "vote"}}), {{col("license_number"), "license_number"}},
                        {{AggFn::MajorityVote, col("vote"), "is_fraud"}, {AggFn::Count, nullptr, "num_votes"}});
  auto r = execute(plan, c, m);
  ASSERT_EQ(r.row_count, 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(r.at(i, r.schema.index_of("num_votes")).as_int(), 4);
    const double v = r.at(i, r.schema.index_of("is_fraud")).as_double();
    EXPECT_TRUE(v == 0.0 || v == 1.0);
  }
  EXPECT_EQ(r.stats.ml_invocations, 8u);
}

TEST(Executor, Aggregates) {
  Catalog c = abc();
  ModelStore m;
  auto plan = aggregate(scan("T", c.get("T").schema), {{col("g"), "g"}},
                        {{AggFn::Sum, col("x"), "s"},
                         {AggFn::Avg, col("x"), "m"},
                         {AggFn::Min, col("a"), "lo"},
                         {AggFn::Max, col("a"), "hi"},
                         {AggFn::Count, nullptr, "n"},
                         {AggFn::MajorityVote, col("a"), "mv"}});
  auto r = execute(plan, c, m);
  ASSERT_EQ(r.row_count, 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    auto get = [&](const char* n) { return r.at(i, r.schema.index_of(n)); };
    if (get("g").as_string() == "p") {
      EXPECT_DOUBLE_EQ(get("s").as_double(), 7.0);
      EXPECT_DOUBLE_EQ(get("m").as_double(), 7.0 / 3);
      EXPECT_EQ(get("lo").as_int(), 1);
      EXPECT_EQ(get("hi").as_int(), 3);
      EXPECT_EQ(get("n").as_int(), 3);
      EXPECT_DOUBLE_EQ(get("mv").as_double(), 3.0);  // tie 1/2/3 resolves to the largest
    } else {
      EXPECT_EQ(get("n").as_int(), 1);
    }
  }
}

TEST(Executor, LimitAndSample) {
  Catalog c = abc();
  ModelStore m;
  auto t = scan("T", c.get("T").schema);
  EXPECT_EQ(execute(limit(t, 2), c, m).row_count, 2u);
  auto s1 = execute(sample(t, 3, 5), c, m), s2 = execute(sample(t, 3, 5), c, m);
  EXPECT_EQ(s1.row_count, 3u);
  EXPECT_EQ(result_digest(s1), result_digest(s2));
  EXPECT_EQ(execute(sample(t, 10, 5), c, m).row_count, 4u);
}

TEST(CompareResults, OrderAndPerturbation) {
  Catalog c = abc();
  ModelStore m;
  auto t = scan("T", c.get("T").schema);
  auto r = execute(t, c, m);
  EXPECT_TRUE(compare_results(r, r).equivalent);

  ResultSet reversed = r;
  for (auto& column : reversed.columns) std::reverse(column.begin(), column.end());
  EXPECT_TRUE(compare_results(r, reversed).equivalent);
  EXPECT_EQ(result_digest(r), result_digest(reversed));

  ResultSet perturbed = r;
  perturbed.columns[2][1] = Value(perturbed.columns[2][1].as_double() + 1e-3);
  auto rep = compare_results(r, perturbed, {"a", "g"}, 1e-6);
  EXPECT_FALSE(rep.equivalent);
  EXPECT_NE(rep.key.find("2"), std::string::npos);
  EXPECT_NE(rep.key.find("q"), std::string::npos);
  EXPECT_NE(result_digest(r), result_digest(perturbed));
  EXPECT_TRUE(compare_results(r, perturbed, {}, 1e-2).equivalent);

  auto narrower = execute(project(t, {{col("a"), "a"}}), c, m);
  EXPECT_THROW(compare_results(r, narrower), Error);
}

TEST(Executor, DeterministicAcrossBatchSizesAndThreads) {
  auto data = generate_query_data("Q_UC10");
  auto plan = build_query("Q_UC10");
  auto base = execute(plan, data.catalog, data.models);
  for (std::size_t batch : {1u, 7u, 4096u}) {
    for (bool det : {true, false}) {
      ExecConfig cfg;
      cfg.batch_size = batch;
      cfg.deterministic = det;
      auto r = execute(plan, data.catalog, data.models, cfg);
      EXPECT_EQ(result_digest(r), result_digest(base)) << batch << det;
      EXPECT_EQ(r.stats.ml_invocations, base.stats.ml_invocations);
      ASSERT_EQ(r.stats.operators.size(), base.stats.operators.size());
      for (std::size_t i = 0; i < r.stats.operators.size(); ++i) EXPECT_EQ(r.stats.operators[i].rows_out, base.stats.operators[i].rows_out);
    }
  }
}

TEST(Executor, CatalogAndModelsRoundTripThroughFiles) {
  auto dir = std::filesystem::temp_directory_path() / "optbench_roundtrip";
  std::filesystem::remove_all(dir);
  auto data = generate_query_data("Q_UC03");
  data.catalog.save_dir(dir / "tables");
  data.models.save_dir(dir / "models");
  Catalog loaded = Catalog::load_dir(dir / "tables");
  ModelStore models = ModelStore::load_dir(dir / "models");
  loaded.add_model_tables(models);
  auto plan = build_query("Q_UC03");
  EXPECT_EQ(result_digest(execute(plan, loaded, models)), result_digest(execute(plan, data.catalog, data.models)));
  std::filesystem::remove_all(dir);
}

TEST(Executor, RuntimeErrors) {
  Catalog c = abc();
  ModelStore m;
  MLAttrs a;
  a.model_id = "missing";
  a.weight_shape = std::pair{1, 1};
  auto plan = project(scan("T", c.get("T").schema), {{ml(F::MatrixMultiply, {func("concat", {col("x")})}, a), "y"}});
  try {
    execute(plan, c, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownModel);
  }
  try {
    execute(scan("nope", Schema({{"a", DType::int64()}})), c, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownTable);
  }
}

// ---- query suite ---------------------------------------------------------------

bool same_catalog(const Catalog& a, const Catalog& b) {
  if (a.names() != b.names()) return false;
  for (const auto& n : a.names()) {
    const auto &ta = a.get(n), &tb = b.get(n);
    if (!(ta.schema == tb.schema) || ta.columns != tb.columns) return false;
  }
  return true;
}

TEST(Suite, GenerationIsDeterministic) {
  auto spec = dataset_spec("Q_Expedia", 7);
  EXPECT_TRUE(same_catalog(generate_dataset(spec), generate_dataset(spec)));
  auto other = spec;
  other.seed = 8;
  EXPECT_FALSE(same_catalog(generate_dataset(spec), generate_dataset(other)));
  EXPECT_EQ(dataset_spec_to_json(dataset_spec_from_json(dataset_spec_to_json(spec))), dataset_spec_to_json(spec));
}

TEST(Suite, CreditColumns) {
  auto spec = dataset_spec("Q_Credit");
  spec.rows.begin()->second = 200;
  const Catalog cat = generate_dataset(spec);
  const auto& t = cat.get("Credit_Card_extension");
  int v = 0;
  for (const auto& c : t.schema.columns())
    if (c.name.size() > 1 && c.name[0] == 'V' && std::isdigit(static_cast<unsigned char>(c.name[1]))) ++v;
  EXPECT_EQ(v, 28);
  EXPECT_TRUE(t.schema.contains("Amount"));
  EXPECT_TRUE(t.schema.contains("Time"));
}

TEST(Suite, SparsityKnob) {
  auto spec = dataset_spec("Q_Credit");
  spec.sparsity = 0.8;
  const Catalog cat = generate_dataset(spec);
  const auto& t = cat.get("Credit_Card_extension");
  double nnz = 0, total = 0;
  for (std::size_t c = 0; c < t.schema.size(); ++c) {
    const auto& name = t.schema[c].name;
    if (!(name.size() > 1 && name[0] == 'V' && std::isdigit(static_cast<unsigned char>(name[1])))) continue;
    for (const auto& v : t.columns[c]) {
      nnz += v.as_double() != 0.0;
      ++total;
    }
  }
  EXPECT_NEAR(nnz / total, 0.2, 0.02);
}

TEST(Suite, IDNet2Shape) {
  auto q = build_query("Q_IDNet2");
  int cross = 0;
  bool vote = false;
  visit_preorder(q, [&](const PlanPtr& n, const std::string&) {
    if (auto* j = n->as<JoinOp>(); j && j->type == JoinType::Cross) ++cross;
    if (auto* a = n->as<AggregateOp>())
      for (const auto& item : a->aggregates) vote = vote || item.fn == AggFn::MajorityVote;
  });
  EXPECT_EQ(cross, 2);
  EXPECT_TRUE(vote);
}

TEST(Suite, ExpediaBookingWindowFilter) {
  bool found = false;
  visit_preorder(build_query("Q_Expedia"), [&](const PlanPtr& n, const std::string&) {
    if (auto* f = n->as<FilterOp>())
      for (const auto& c : conjuncts(f->predicate)) found = found || c->to_string().find("srch_booking_window > 10") != std::string::npos;
  });
  EXPECT_TRUE(found);
}

TEST(Suite, EveryQueryRunsAndUsesItsFunctions) {
  ASSERT_EQ(suite_query_ids().size(), 10u);
  std::set<F> used;
  for (const auto& id : suite_query_ids()) {
    auto entry = suite_entry(id);
    auto data = generate_query_data(id);
    auto r = execute(entry.plan, data.catalog, data.models);
    EXPECT_GT(r.row_count, 0u) << id;
    EXPECT_GT(r.stats.ml_invocations, 0u) << id;
    std::set<F> in_plan;
    for (const auto& s : ml_call_sites(entry.plan))
      visit_ml_calls(s.call, "", [&](const ExprPtr& c, const std::string&) { in_plan.insert(c->as<MLCall>()->fn); });
    for (F fn : entry.expected_ml_functions) EXPECT_TRUE(in_plan.count(fn)) << id << " " << ml_function_name(fn);
    used.insert(in_plan.begin(), in_plan.end());
  }
  // fused_dnn appears once the fusion actions run; distance and cosine_sim are kernel-only.
  for (F fn : all_ml_functions())
    if (fn != F::FusedDnn && fn != F::Distance && fn != F::CosineSim) EXPECT_TRUE(used.count(fn)) << ml_function_name(fn);
}

TEST(Suite, ScaleMultipliesFactTables) {
  auto one = dataset_spec("Q_UC08", 7, 1.0), two = dataset_spec("Q_UC08", 7, 2.0);
  std::size_t grew = 0;
  for (const auto& [t, n] : one.rows) grew += two.rows.at(t) == 2 * n;
  EXPECT_GE(grew, 1u);
  EXPECT_THROW(dataset_spec("Q_UC08", 7, 0.0), Error);
  EXPECT_THROW(build_query("Q_Nope"), Error);
}

TEST(Suite, ApplicabilityFixtureIsCurrent) {
  std::ifstream in(suite_dir() / "applicability.json");
  ASSERT_TRUE(in);
  auto fixture = applicability_from_json(nlohmann::json::parse(in));
  EXPECT_EQ(fixture, applicability());
  EXPECT_EQ(fixture.size(), 9u);
  for (const auto& [action, queries] : fixture) EXPECT_FALSE(queries.empty()) << action;
}

}  // namespace
}  // namespace optbench
