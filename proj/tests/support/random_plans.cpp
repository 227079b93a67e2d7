#include "random_plans.hpp"

#include <string>
#include <vector>

namespace optbench::testing {

namespace {

std::vector<double> draw(std::mt19937_64& rng, std::size_t n, double zero_p) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::bernoulli_distribution zero(zero_p);
  std::vector<double> v(n);
  for (auto& x : v) x = zero(rng) ? 0.0 : u(rng);
  return v;
}

Table make_table(std::mt19937_64& rng, const std::string& name, const std::string& i, const std::string& d,
                 const std::string& v, std::size_t rows) {
  Table t{name, Schema({{i, DType::int64()}, {d, DType::float64()}, {v, DType::vector(4)}}), {{}, {}, {}}};
  std::uniform_int_distribution<int> key(0, 5);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (std::size_t r = 0; r < rows; ++r) {
    t.columns[0].push_back(Value(std::int64_t{key(rng)}));
    t.columns[1].push_back(Value(u(rng)));
    t.columns[2].push_back(Value(draw(rng, 4, 0.8)));
  }
  return t;
}

DecisionTree random_tree(std::mt19937_64& rng, int depth) {
  DecisionTree t;
  std::uniform_int_distribution<int> feat(0, 1);
  std::uniform_real_distribution<double> thr(0.0, 10.0);
  std::uniform_real_distribution<double> leaf(-5.0, 5.0);
  auto build = [&](auto&& self, int d) -> int {
    const int idx = static_cast<int>(t.nodes.size());
    t.nodes.push_back({});
    if (d == 0) {
      t.nodes[idx].value = leaf(rng);
      return idx;
    }
    const int f = feat(rng);
    const double th = thr(rng);
    const int l = self(self, d - 1);
    const int r = self(self, d - 1);
    t.nodes[idx] = {f, th, l, r, 0.0};
    return idx;
  };
  build(build, depth);
  return t;
}

}  // namespace

RandomWorld random_world(std::uint64_t seed, std::size_t t1_rows, std::size_t t2_rows) {
  std::mt19937_64 rng(seed);
  RandomWorld w;
  w.catalog.add(make_table(rng, "t1", "a", "b", "f", t1_rows));
  w.catalog.add(make_table(rng, "t2", "c", "d", "g", t2_rows));
  w.models.add("w1", DenseMatrix{4, 3, draw(rng, 12, 0.0)});
  w.models.add("b1", BiasVector{draw(rng, 3, 0.0)});
  w.models.add("w2", DenseMatrix{3, 2, draw(rng, 6, 0.0)});
  w.models.add("b2", BiasVector{draw(rng, 2, 0.0)});
  TreeEnsemble e;
  e.trees.push_back(random_tree(rng, 3));
  e.num_features = 2;
  w.models.add("rt", e);
  w.catalog.add_model_tables(w.models);
  return w;
}

RandomPlanGenerator::RandomPlanGenerator(std::uint64_t seed, const RandomWorld& world, RandomPlanOptions options)
    : rng_(seed), world_(world), options_(options) {}

PlanPtr RandomPlanGenerator::next() {
  int joins = 0;
  std::uniform_int_distribution<int> depth(1, options_.max_depth);
  return gen(depth(rng_), joins);
}

PlanPtr RandomPlanGenerator::leaf() {
  const std::string name = std::bernoulli_distribution(0.5)(rng_) ? "t1" : "t2";
  return scan(name, world_.catalog.get(name).schema);
}

PlanPtr RandomPlanGenerator::rename_apart(PlanPtr right, const Schema& left) {
  std::vector<NamedExpr> items;
  Schema taken = left;
  for (const auto& c : right->schema().columns()) {
    std::string n = unique_name(c.name, taken);
    taken = taken.concat(Schema({{n, c.dtype}}));
    items.push_back({col(c.name), n});
  }
  return project(std::move(right), std::move(items));
}

ExprPtr RandomPlanGenerator::scalar_predicate(const Schema& s) {
  std::vector<const Column*> numeric;
  for (const auto& c : s.columns())
    if (c.dtype.is_numeric_scalar()) numeric.push_back(&c);
  if (numeric.empty()) return nullptr;
  std::uniform_int_distribution<std::size_t> pick(0, numeric.size() - 1);
  std::uniform_int_distribution<int> op(0, 5);
  auto one = [&] {
    const Column& c = *numeric[pick(rng_)];
    Value v = c.dtype.kind == TypeKind::Int64 ? Value(std::int64_t{std::uniform_int_distribution<int>(0, 5)(rng_)})
                                              : Value(std::uniform_real_distribution<double>(0.0, 10.0)(rng_));
    return cmp(static_cast<CompareOp>(op(rng_)), col(c.name), lit(std::move(v)));
  };
  if (std::bernoulli_distribution(0.3)(rng_)) return conj({one(), one()});
  return one();
}

ExprPtr RandomPlanGenerator::ml_item(const Schema& s) {
  std::vector<std::pair<std::string, int>> tensors;
  std::vector<std::string> floats;
  for (const auto& c : s.columns()) {
    if (c.dtype.kind == TypeKind::Vector && (c.dtype.dim() == 4 || c.dtype.dim() == 3)) tensors.push_back({c.name, c.dtype.dim()});
    if (c.dtype.kind == TypeKind::Float64) floats.push_back(c.name);
  }
  auto layer = [](ExprPtr x, int which, std::optional<MLFunctionId> act) {
    MLAttrs w;
    w.model_id = which == 1 ? "w1" : "w2";
    w.weight_shape = which == 1 ? std::pair{4, 3} : std::pair{3, 2};
    MLAttrs b;
    b.model_id = which == 1 ? "b1" : "b2";
    b.bias_shape = which == 1 ? 3 : 2;
    ExprPtr e = ml(MLFunctionId::MatrixAddition, {ml(MLFunctionId::MatrixMultiply, {std::move(x)}, std::move(w))}, std::move(b));
    return act ? ml(*act, {e}) : e;
  };
  const int choice = std::uniform_int_distribution<int>(0, 3)(rng_);
  if (!tensors.empty() && choice < 3) {
    const auto& [name, dim] = tensors[std::uniform_int_distribution<std::size_t>(0, tensors.size() - 1)(rng_)];
    if (dim == 3) return layer(col(name), 2, MLFunctionId::Sigmoid);
    ExprPtr h = layer(col(name), 1, MLFunctionId::Relu);
    return choice == 0 ? h : layer(h, 2, std::nullopt);
  }
  if (floats.size() >= 2) {
    MLAttrs t;
    t.model_id = "rt";
    t.tree_spec = std::make_shared<TreeEnsemble>(world_.models.get_as<TreeEnsemble>("rt"));
    return ml(MLFunctionId::DecisionTree, {func("concat", {col(floats[0]), col(floats[1])})}, std::move(t));
  }
  return nullptr;
}

PlanPtr RandomPlanGenerator::gen(int depth, int& joins) {
  if (depth <= 1) return leaf();
  std::uniform_int_distribution<int> op(0, 9);
  for (;;) {
    const int k = op(rng_);
    if (k <= 1) {  // Filter
      PlanPtr child = gen(depth - 1, joins);
      if (ExprPtr p = scalar_predicate(child->schema())) return filter(child, p);
      return child;
    }
    if (k <= 4) {  // Project
      PlanPtr child = gen(depth - 1, joins);
      std::vector<NamedExpr> items;
      for (const auto& c : child->schema().columns())
        if (std::bernoulli_distribution(0.7)(rng_)) items.push_back({col(c.name), c.name});
      if (ExprPtr m = ml_item(child->schema())) items.push_back({m, unique_name("m" + std::to_string(counter_++), child->schema())});
      for (const auto& c : child->schema().columns())
        if (c.dtype.kind == TypeKind::Int64 && std::bernoulli_distribution(0.2)(rng_)) {
          items.push_back({arith(ArithOp::Add, col(c.name), lit(Value(std::int64_t{1}))),
                           unique_name("p" + std::to_string(counter_++), child->schema())});
          break;
        }
      if (items.empty()) items.push_back({col(child->schema()[0].name), child->schema()[0].name});
      return project(child, std::move(items));
    }
    if (k <= 6 && joins < options_.max_joins) {  // Join
      ++joins;
      PlanPtr left = gen(depth - 1, joins);
      PlanPtr right = rename_apart(gen(depth - 1, joins), left->schema());
      std::string li, ri;
      for (const auto& c : left->schema().columns())
        if (c.dtype.kind == TypeKind::Int64) li = c.name;
      for (const auto& c : right->schema().columns())
        if (c.dtype.kind == TypeKind::Int64) ri = c.name;
      if (!li.empty() && !ri.empty() && std::bernoulli_distribution(0.7)(rng_))
        return join(left, right, cmp(CompareOp::Eq, col(li), col(ri)));
      return cross_join(left, right);
    }
    if (k == 7) {  // Aggregate
      PlanPtr child = gen(depth - 1, joins);
      std::string key, val;
      for (const auto& c : child->schema().columns()) {
        if (c.dtype.kind == TypeKind::Int64 && key.empty()) key = c.name;
        else if (c.dtype.is_numeric_scalar() && val.empty()) val = c.name;
      }
      if (key.empty()) return child;
      std::vector<AggregateItem> aggs{{AggFn::Count, nullptr, "n_" + std::to_string(counter_++)}};
      if (!val.empty()) aggs.push_back({AggFn::Sum, col(val), "s_" + std::to_string(counter_++)});
      return aggregate(child, {{col(key), key}}, std::move(aggs));
    }
    if (k >= 8 && options_.allow_order_sensitive) {
      PlanPtr child = gen(depth - 1, joins);
      const int n = std::uniform_int_distribution<int>(1, 30)(rng_);
      if (k == 8) return limit(child, n);
      return sample(child, n, std::uniform_int_distribution<std::uint64_t>(0, 99)(rng_));
    }
  }
}

}  // namespace optbench::testing
