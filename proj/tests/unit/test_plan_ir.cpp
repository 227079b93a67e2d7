#include <gtest/gtest.h>

#include <fstream>
#include <map>

#include "optbench/plan.hpp"
#include "optbench/plan_json.hpp"
#include "optbench/query_suite.hpp"
#include "random_plans.hpp"

namespace optbench {
namespace {

Schema ab() { return Schema({{"a", DType::int64()}, {"b", DType::float64()}}); }

TEST(Schema, ScanPassesTableSchemaThrough) {
  EXPECT_EQ(scan("T", ab())->schema(), ab());
}

TEST(Schema, ProjectionOfArithmetic) {
  auto p = project(scan("T", ab()), {{arith(ArithOp::Add, col("a"), lit(1)), "c"}});
  EXPECT_EQ(p->schema(), Schema({{"c", DType::int64()}}));
}

TEST(Schema, CrossJoinConcatenates) {
  auto j = cross_join(scan("L", Schema({{"a", DType::int64()}})), scan("R", Schema({{"b", DType::float64()}})));
  EXPECT_EQ(j->schema(), Schema({{"a", DType::int64()}, {"b", DType::float64()}}));
}

TEST(Schema, DerivationIsIdempotent) {
  auto q = build_query("Q_UC08");
  visit_preorder(q, [](const PlanPtr& n, const std::string&) {
    EXPECT_EQ(derive_schema(*n), n->schema());
    EXPECT_EQ(derive_schema(*n), derive_schema(*n));
  });
}

TEST(Schema, Rejections) {
  auto t = scan("T", ab());
  try {
    project(t, {{col("zz"), "x"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnresolvedColumn);
  }
  try {
    filter(t, arith(ArithOp::Add, col("a"), lit(1)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TypeMismatch);
  }
  EXPECT_THROW(cross_join(t, t), Error);  // duplicate column names
}

TEST(Hash, DeepCopyKeepsHash) {
  for (const auto& id : suite_query_ids()) {
    auto q = build_query(id);
    auto c = deep_copy(q);
    EXPECT_NE(q.get(), c.get());
    EXPECT_EQ(q->hash(), c->hash()) << id;
  }
}

TEST(Hash, KernelModeIsHashed) {
  auto x = scan("T", Schema({{"x", DType::vector(8)}}));
  MLAttrs a;
  a.model_id = "w";
  a.weight_shape = std::pair{8, 4};
  auto dense = project(x, {{ml(MLFunctionId::MatrixMultiply, {col("x")}, a), "y"}});
  a.kernel_mode = KernelMode::Sparse;
  auto sparse = project(x, {{ml(MLFunctionId::MatrixMultiply, {col("x")}, a), "y"}});
  EXPECT_NE(dense->hash(), sparse->hash());
}

TEST(Hash, NoCollisionsAmongDistinctRandomPlans) {
  auto world = testing::random_world();
  testing::RandomPlanGenerator gen(11, world);
  std::map<std::uint64_t, std::vector<PlanPtr>> by_hash;
  for (int i = 0; i < 1000; ++i) {
    auto p = gen.next();
    ASSERT_LE(static_cast<int>(node_count(*p)), 64);
    by_hash[p->hash()].push_back(p);
  }
  std::size_t collisions = 0;
  for (const auto& [h, plans] : by_hash)
    for (std::size_t i = 1; i < plans.size(); ++i)
      if (!structurally_equal(*plans[0], *plans[i])) ++collisions;
  EXPECT_EQ(collisions, 0u);
  EXPECT_GT(by_hash.size(), 500u);
}

TEST(Json, RoundTripPreservesHash) {
  auto q = build_query("Q_Credit");
  auto back = parse_plan(serialize_plan(*q));
  EXPECT_TRUE(structurally_equal(*q, *back));
  EXPECT_EQ(q->hash(), back->hash());

  auto world = testing::random_world();
  testing::RandomPlanGenerator gen(12, world);
  for (int i = 0; i < 200; ++i) {
    auto p = gen.next();
    EXPECT_EQ(parse_plan(serialize_plan(*p))->hash(), p->hash());
  }
}

TEST(Json, AnnotatedDocumentParses) {
  auto q = build_query("Q_UC08");
  auto doc = plan_to_document(*q, true);
  EXPECT_EQ(plan_from_document(doc)->hash(), q->hash());
  EXPECT_EQ(doc["plan"]["path"], "0");
}

TEST(Json, Rejections) {
  auto code_of = [](std::string_view text) {
    try {
      parse_plan(text);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Internal;
  };
  EXPECT_EQ(code_of(""), ErrorCode::ParseError);
  EXPECT_EQ(code_of("{}"), ErrorCode::ParseError);
  EXPECT_EQ(code_of(R"({"format":"optbench-plan/1","plan":{"kind":"filter","predicate":{"kind":"literal","dtype":"bool","value":true}}})"),
            ErrorCode::ParseError);
  auto doc = plan_to_document(*build_query("Q_Credit"));
  doc["plan"]["children"] = nlohmann::json::array();
  EXPECT_EQ(code_of(doc.dump()), ErrorCode::ParseError);
}

TEST(Json, CheckedInSuitePlansMatchBuilders) {
  for (const auto& id : suite_query_ids()) {
    std::ifstream in(suite_dir() / "plans" / (id + ".json"));
    ASSERT_TRUE(in) << id;
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_EQ(parse_plan(text)->hash(), build_query(id)->hash()) << id;
  }
}

TEST(Paths, NodeAtAndReplace) {
  auto q = build_query("Q_Expedia");
  std::vector<std::string> paths;
  visit_preorder(q, [&](const PlanPtr& n, const std::string& p) {
    paths.push_back(p);
    EXPECT_EQ(node_at(q, p).get(), n.get());
  });
  EXPECT_EQ(paths.front(), "0");
  EXPECT_EQ(paths.size(), node_count(*q));
  auto replaced = replace_at(q, "0.0", limit(node_at(q, "0.0"), 5));
  EXPECT_NE(replaced->hash(), q->hash());
  EXPECT_EQ(node_at(replaced, "0.0")->kind(), NodeKind::Limit);
  EXPECT_EQ(node_at(q, "0.0")->kind(), NodeKind::Filter);  // input untouched
}

TEST(Paths, MLCallSites) {
  auto sites = ml_call_sites(build_query("Q_UC10"));
  ASSERT_FALSE(sites.empty());
  EXPECT_EQ(sites.front().node_path, "0");
  for (const auto& s : sites) EXPECT_NE(s.call->as<MLCall>(), nullptr);
}

}  // namespace
}  // namespace optbench
