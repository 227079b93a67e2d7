#include "optbench/expr.hpp"

#include <algorithm>
#include <cmath>

#include "optbench/ml_kernels.hpp"

namespace optbench {

using nlohmann::json;

namespace {

constexpr std::string_view kMLNames[] = {
    "matrix_multiply", "matrix_addition", "conv2d", "softmax", "sigmoid",         "relu",
    "distance",        "cosine_sim",      "argmax", "fused_dnn", "min_max_scaler", "one_hot_encoder",
    "kmeans",          "naive_bayes",     "llm",    "decision_tree", "decision_forest"};

}  // namespace

std::string_view ml_function_name(MLFunctionId fn) { return kMLNames[static_cast<int>(fn)]; }

MLFunctionId ml_function_from_name(std::string_view name) {
  for (int i = 0; i < kNumMLFunctions; ++i)
    if (kMLNames[i] == name) return static_cast<MLFunctionId>(i);
  fail(ErrorCode::ParseError, "unknown ML function '" + std::string(name) + "'");
}

std::vector<MLFunctionId> all_ml_functions() {
  std::vector<MLFunctionId> out;
  for (int i = 0; i < kNumMLFunctions; ++i) out.push_back(static_cast<MLFunctionId>(i));
  return out;
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Softmax: return "softmax";
  }
  return "?";
}

Activation activation_from_name(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "softmax") return Activation::Softmax;
  fail(ErrorCode::ParseError, "unknown activation '" + std::string(name) + "'");
}

bool MLAttrs::operator==(const MLAttrs& o) const {
  const bool trees_equal = tree_spec == o.tree_spec || (tree_spec && o.tree_spec && *tree_spec == *o.tree_spec);
  return model_id == o.model_id && weight_shape == o.weight_shape && weight_rows == o.weight_rows &&
         bias_shape == o.bias_shape && kernel_mode == o.kernel_mode && layers == o.layers && trees_equal &&
         filter_spec == o.filter_spec && out_dim == o.out_dim && metric == o.metric;
}

json attrs_to_json(const MLAttrs& a) {
  json j = json::object();
  if (a.model_id) j["model_id"] = *a.model_id;
  if (a.weight_shape) j["weight_shape"] = {a.weight_shape->first, a.weight_shape->second};
  if (a.weight_rows) j["weight_rows"] = {a.weight_rows->first, a.weight_rows->second};
  if (a.bias_shape) j["bias_shape"] = *a.bias_shape;
  if (a.kernel_mode) j["kernel_mode"] = *a.kernel_mode == KernelMode::Sparse ? "sparse" : "dense";
  if (!a.layers.empty()) {
    json layers = json::array();
    for (const auto& l : a.layers)
      layers.push_back({{"weight", l.weight_model},
                        {"bias", l.bias_model},
                        {"activation", std::string(activation_name(l.activation))},
                        {"in", l.in_dim},
                        {"out", l.out_dim},
                        {"kernel_mode", l.kernel_mode == KernelMode::Sparse ? "sparse" : "dense"}});
    j["layers"] = std::move(layers);
  }
  if (a.tree_spec) j["tree_spec"] = ensemble_to_json(*a.tree_spec);
  if (a.filter_spec) j["filter_spec"] = {a.filter_spec->count, a.filter_spec->height, a.filter_spec->width};
  if (a.out_dim) j["out_dim"] = *a.out_dim;
  if (a.metric) j["metric"] = *a.metric == DistanceMetric::L1 ? "l1" : "l2";
  return j;
}

namespace {

KernelMode kernel_mode_from(const json& j) {
  const auto s = j.get<std::string>();
  if (s == "dense") return KernelMode::Dense;
  if (s == "sparse") return KernelMode::Sparse;
  fail(ErrorCode::ParseError, "unknown kernel_mode '" + s + "'");
}

}  // namespace

MLAttrs attrs_from_json(const json& j) {
  MLAttrs a;
  if (!j.is_object()) fail(ErrorCode::ParseError, "attrs must be an object");
  for (const auto& [key, _] : j.items()) {
    static const std::vector<std::string> known = {"model_id", "weight_shape", "weight_rows", "bias_shape",
                                                   "kernel_mode", "layers", "tree_spec", "filter_spec",
                                                   "out_dim", "metric"};
    if (std::find(known.begin(), known.end(), key) == known.end())
      fail(ErrorCode::ParseError, "unknown attrs field '" + key + "'");
  }
  if (j.contains("model_id")) a.model_id = j["model_id"].get<std::string>();
  if (j.contains("weight_shape")) a.weight_shape = {j["weight_shape"].at(0).get<int>(), j["weight_shape"].at(1).get<int>()};
  if (j.contains("weight_rows")) a.weight_rows = {j["weight_rows"].at(0).get<int>(), j["weight_rows"].at(1).get<int>()};
  if (j.contains("bias_shape")) a.bias_shape = j["bias_shape"].get<int>();
  if (j.contains("kernel_mode")) a.kernel_mode = kernel_mode_from(j["kernel_mode"]);
  if (j.contains("layers")) {
    for (const auto& l : j["layers"]) {
      LayerSpec s;
      s.weight_model = l.at("weight").get<std::string>();
      s.bias_model = l.at("bias").get<std::string>();
      s.activation = activation_from_name(l.at("activation").get<std::string>());
      s.in_dim = l.at("in").get<int>();
      s.out_dim = l.at("out").get<int>();
      if (l.contains("kernel_mode")) s.kernel_mode = kernel_mode_from(l["kernel_mode"]);
      a.layers.push_back(std::move(s));
    }
  }
  if (j.contains("tree_spec")) a.tree_spec = std::make_shared<const TreeEnsemble>(ensemble_from_json(j["tree_spec"]));
  if (j.contains("filter_spec"))
    a.filter_spec = FilterSpec{j["filter_spec"].at(0).get<int>(), j["filter_spec"].at(1).get<int>(),
                               j["filter_spec"].at(2).get<int>()};
  if (j.contains("out_dim")) a.out_dim = j["out_dim"].get<int>();
  if (j.contains("metric")) {
    const auto m = j["metric"].get<std::string>();
    if (m == "l1") a.metric = DistanceMetric::L1;
    else if (m == "l2") a.metric = DistanceMetric::L2;
    else fail(ErrorCode::ParseError, "unknown distance metric '" + m + "'");
  }
  return a;
}

std::string_view arith_op_symbol(ArithOp op) {
  static constexpr std::string_view s[] = {"+", "-", "*", "/"};
  return s[static_cast<int>(op)];
}

std::string_view compare_op_symbol(CompareOp op) {
  static constexpr std::string_view s[] = {"=", "!=", "<", "<=", ">", ">="};
  return s[static_cast<int>(op)];
}

std::string_view logical_op_name(LogicalOp op) {
  static constexpr std::string_view s[] = {"and", "or", "not"};
  return s[static_cast<int>(op)];
}

CompareOp flip(CompareOp op) {
  switch (op) {
    case CompareOp::Lt: return CompareOp::Gt;
    case CompareOp::Le: return CompareOp::Ge;
    case CompareOp::Gt: return CompareOp::Lt;
    case CompareOp::Ge: return CompareOp::Le;
    default: return op;
  }
}

namespace {

json value_to_json(const Value& v) {
  switch (v.kind()) {
    case TypeKind::Int64: return v.as_int();
    case TypeKind::Float64: return v.as_double();
    case TypeKind::String: return v.as_string();
    case TypeKind::Bool: return v.as_bool();
    case TypeKind::Vector: return v.vec();
    case TypeKind::Matrix: return {{"rows", v.mat().rows}, {"cols", v.mat().cols}, {"data", v.mat().data}};
  }
  return nullptr;
}

Value value_from_json(const json& j, const DType& t) {
  switch (t.kind) {
    case TypeKind::Int64: return Value(j.get<std::int64_t>());
    case TypeKind::Float64: return Value(j.get<double>());
    case TypeKind::String: return Value(j.get<std::string>());
    case TypeKind::Bool: return Value(j.get<bool>());
    case TypeKind::Vector: {
      auto v = j.get<std::vector<double>>();
      if (static_cast<int>(v.size()) != t.cols) fail(ErrorCode::ParseError, "vector literal length mismatch");
      return Value(std::move(v));
    }
    case TypeKind::Matrix: {
      Matrix m{j.at("rows").get<int>(), j.at("cols").get<int>(), j.at("data").get<std::vector<double>>()};
      if (m.rows != t.rows || m.cols != t.cols || m.data.size() != static_cast<std::size_t>(m.rows) * m.cols)
        fail(ErrorCode::ParseError, "matrix literal shape mismatch");
      return Value(std::move(m));
    }
  }
  return {};
}

}  // namespace

json Expr::local_json() const {
  return std::visit(
      [](const auto& k) -> json {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, ColumnRef>) {
          return {{"kind", "column"}, {"name", k.name}};
        } else if constexpr (std::is_same_v<T, Literal>) {
          return {{"kind", "literal"}, {"dtype", k.value.dtype().to_string()}, {"value", value_to_json(k.value)}};
        } else if constexpr (std::is_same_v<T, Arith>) {
          return {{"kind", "arith"}, {"op", std::string(arith_op_symbol(k.op))}};
        } else if constexpr (std::is_same_v<T, Compare>) {
          return {{"kind", "compare"}, {"op", std::string(compare_op_symbol(k.op))}};
        } else if constexpr (std::is_same_v<T, Logical>) {
          return {{"kind", "logical"}, {"op", std::string(logical_op_name(k.op))}};
        } else if constexpr (std::is_same_v<T, MLCall>) {
          return {{"kind", "ml"}, {"fn", std::string(ml_function_name(k.fn))}, {"attrs", attrs_to_json(k.attrs)}};
        } else {
          return {{"kind", "func"}, {"name", k.name}};
        }
      },
      kind_);
}

Expr::Expr(Kind kind, std::vector<ExprPtr> args) : kind_(std::move(kind)), args_(std::move(args)) {
  for (const auto& a : args_)
    if (!a) fail(ErrorCode::ValidationError, "null expression operand");
  if (auto* l = as<Literal>()) {
    if (l->value.is_double() && !std::isfinite(l->value.as_double()))
      fail(ErrorCode::ValidationError, "non-finite literal");
  }
  std::uint64_t h = stable_hash(local_json().dump());
  for (const auto& a : args_) h = hash_combine(h, a->hash());
  hash_ = hash_combine(h, args_.size());
}

std::string Expr::to_string() const {
  auto join_args = [&](std::string_view sep) {
    std::string s;
    for (std::size_t i = 0; i < args_.size(); ++i) s += (i ? std::string(sep) : "") + args_[i]->to_string();
    return s;
  };
  return std::visit(
      [&](const auto& k) -> std::string {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, ColumnRef>) {
          return k.name;
        } else if constexpr (std::is_same_v<T, Literal>) {
          return k.value.to_string();
        } else if constexpr (std::is_same_v<T, Arith>) {
          return "(" + join_args(" " + std::string(arith_op_symbol(k.op)) + " ") + ")";
        } else if constexpr (std::is_same_v<T, Compare>) {
          return join_args(" " + std::string(compare_op_symbol(k.op)) + " ");
        } else if constexpr (std::is_same_v<T, Logical>) {
          if (k.op == LogicalOp::Not) return "NOT (" + join_args("") + ")";
          return "(" + join_args(k.op == LogicalOp::And ? " AND " : " OR ") + ")";
        } else if constexpr (std::is_same_v<T, MLCall>) {
          std::string s(ml_function_name(k.fn));
          if (k.attrs.mode() == KernelMode::Sparse && k.fn == MLFunctionId::MatrixMultiply) s += "[sparse]";
          if (k.attrs.model_id) s += "<" + *k.attrs.model_id + ">";
          return s + "(" + join_args(", ") + ")";
        } else {
          return k.name + "(" + join_args(", ") + ")";
        }
      },
      kind_);
}

ExprPtr col(std::string name) { return std::make_shared<const Expr>(ColumnRef{std::move(name)}, std::vector<ExprPtr>{}); }
ExprPtr lit(Value v) { return std::make_shared<const Expr>(Literal{std::move(v)}, std::vector<ExprPtr>{}); }
ExprPtr arith(ArithOp op, ExprPtr l, ExprPtr r) {
  return std::make_shared<const Expr>(Arith{op}, std::vector<ExprPtr>{std::move(l), std::move(r)});
}
ExprPtr cmp(CompareOp op, ExprPtr l, ExprPtr r) {
  return std::make_shared<const Expr>(Compare{op}, std::vector<ExprPtr>{std::move(l), std::move(r)});
}
ExprPtr logical(LogicalOp op, std::vector<ExprPtr> args) {
  return std::make_shared<const Expr>(Logical{op}, std::move(args));
}
ExprPtr conj(std::vector<ExprPtr> args) {
  if (args.size() == 1) return args.front();
  return logical(LogicalOp::And, std::move(args));
}
ExprPtr ml(MLFunctionId fn, std::vector<ExprPtr> args, MLAttrs attrs) {
  return std::make_shared<const Expr>(MLCall{fn, std::move(attrs)}, std::move(args));
}
ExprPtr func(std::string name, std::vector<ExprPtr> args) {
  return std::make_shared<const Expr>(Func{std::move(name)}, std::move(args));
}
ExprPtr with_args(const Expr& e, std::vector<ExprPtr> args) { return std::make_shared<const Expr>(e.kind(), std::move(args)); }

bool contains_ml(const Expr& e) {
  if (e.is<MLCall>()) return true;
  return std::any_of(e.args().begin(), e.args().end(), [](const ExprPtr& a) { return contains_ml(*a); });
}

void collect_columns(const Expr& e, std::vector<std::string>& out) {
  if (auto* c = e.as<ColumnRef>()) {
    if (std::find(out.begin(), out.end(), c->name) == out.end()) out.push_back(c->name);
    return;
  }
  for (const auto& a : e.args()) collect_columns(*a, out);
}

std::vector<std::string> free_columns(const Expr& e) {
  std::vector<std::string> out;
  collect_columns(e, out);
  return out;
}

bool is_deterministic(const Expr& e) {
  if (e.is_func("row_id")) return false;
  return std::all_of(e.args().begin(), e.args().end(), [](const ExprPtr& a) { return is_deterministic(*a); });
}

std::vector<ExprPtr> conjuncts(const ExprPtr& e) {
  auto* l = e->as<Logical>();
  if (!l || l->op != LogicalOp::And) return {e};
  std::vector<ExprPtr> out;
  for (const auto& a : e->args()) {
    auto sub = conjuncts(a);
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

void visit_ml_calls(const ExprPtr& e, const std::string& path,
                    const std::function<void(const ExprPtr&, const std::string&)>& fn) {
  if (e->is<MLCall>()) fn(e, path);
  for (std::size_t i = 0; i < e->args().size(); ++i)
    visit_ml_calls(e->args()[i], path + ".a" + std::to_string(i), fn);
}

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.hash() != b.hash() || a.args().size() != b.args().size()) return false;
  if (a.local_json() != b.local_json()) return false;
  for (std::size_t i = 0; i < a.args().size(); ++i)
    if (!structurally_equal(*a.args()[i], *b.args()[i])) return false;
  return true;
}

namespace {

[[noreturn]] void type_fail(const Expr& e, const std::string& why) {
  fail(ErrorCode::TypeMismatch, why + " in " + e.to_string());
}

void expect_arity(const Expr& e, std::size_t n) {
  if (e.args().size() != n)
    fail(ErrorCode::ArityMismatch, e.to_string() + " expects " + std::to_string(n) + " operands");
}

int literal_int(const Expr& e, const Expr& owner) {
  auto* l = e.as<Literal>();
  if (!l || !l->value.is_int()) type_fail(owner, "expected an integer literal operand");
  return static_cast<int>(l->value.as_int());
}

DType func_type(const Expr& e, const Func& f, const Schema& input) {
  std::vector<DType> t;
  for (const auto& a : e.args()) t.push_back(type_of(*a, input));
  if (f.name == "concat") {
    if (t.empty()) fail(ErrorCode::ArityMismatch, "concat needs operands");
    int dim = 0;
    for (const auto& x : t) {
      if (x.kind == TypeKind::String || x.kind == TypeKind::Matrix) type_fail(e, "concat takes numbers and vectors");
      dim += x.element_count();
    }
    return DType::vector(dim);
  }
  if (f.name == "element") {
    expect_arity(e, 2);
    if (t[0].kind != TypeKind::Vector || t[1].kind != TypeKind::Int64) type_fail(e, "element(vector, int64)");
    return DType::float64();
  }
  if (f.name == "flatten") {
    expect_arity(e, 1);
    if (!t[0].is_tensor()) type_fail(e, "flatten needs a tensor");
    return DType::vector(t[0].element_count());
  }
  if (f.name == "im2col") {
    expect_arity(e, 3);
    if (t[0].kind != TypeKind::Matrix) type_fail(e, "im2col needs a matrix image");
    const int fh = literal_int(*e.arg(1), e), fw = literal_int(*e.arg(2), e);
    if (fh <= 0 || fw <= 0 || fh > t[0].rows || fw > t[0].cols) fail(ErrorCode::ShapeMismatch, "im2col window larger than image");
    return DType::matrix((t[0].rows - fh + 1) * (t[0].cols - fw + 1), fh * fw);
  }
  if (f.name == "fold_maps") {
    expect_arity(e, 3);
    const int oh = literal_int(*e.arg(1), e), ow = literal_int(*e.arg(2), e);
    if (t[0].kind != TypeKind::Matrix || oh <= 0 || ow <= 0 || t[0].rows != oh * ow)
      fail(ErrorCode::ShapeMismatch, "fold_maps needs a (oh*ow) x F matrix in " + e.to_string());
    return DType::matrix(t[0].cols * oh, ow);
  }
  if (f.name == "row_id") {
    expect_arity(e, 0);
    return DType::int64();
  }
  if (f.name == "to_double") {
    expect_arity(e, 1);
    if (t[0].is_tensor()) type_fail(e, "to_double needs a scalar");
    return DType::float64();
  }
  if (f.name == "to_int") {
    expect_arity(e, 1);
    if (t[0].is_tensor()) type_fail(e, "to_int needs a scalar");
    return DType::int64();
  }
  fail(ErrorCode::ValidationError, "unknown function '" + f.name + "'");
}

DType arith_type(const Expr& e, ArithOp op, const DType& l, const DType& r) {
  if (l.is_numeric_scalar() && r.is_numeric_scalar()) {
    if (op != ArithOp::Div && l.kind == TypeKind::Int64 && r.kind == TypeKind::Int64) return DType::int64();
    return DType::float64();
  }
  if (l.kind == TypeKind::Vector && r.kind == TypeKind::Vector) {
    if (l.cols != r.cols) fail(ErrorCode::ShapeMismatch, "vector length mismatch in " + e.to_string());
    if (op == ArithOp::Div) type_fail(e, "vector division");
    return l;
  }
  if (l.kind == TypeKind::Vector && r.is_numeric_scalar() && (op == ArithOp::Mul || op == ArithOp::Div)) return l;
  if (l.is_numeric_scalar() && r.kind == TypeKind::Vector && op == ArithOp::Mul) return r;
  type_fail(e, "unsupported operand types " + l.to_string() + ", " + r.to_string());
}

}  // namespace

DType type_of(const Expr& e, const Schema& input) {
  return std::visit(
      [&](const auto& k) -> DType {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, ColumnRef>) {
          return input[input.index_of(k.name)].dtype;
        } else if constexpr (std::is_same_v<T, Literal>) {
          return k.value.dtype();
        } else if constexpr (std::is_same_v<T, Arith>) {
          expect_arity(e, 2);
          return arith_type(e, k.op, type_of(*e.arg(0), input), type_of(*e.arg(1), input));
        } else if constexpr (std::is_same_v<T, Compare>) {
          expect_arity(e, 2);
          const DType l = type_of(*e.arg(0), input), r = type_of(*e.arg(1), input);
          const bool ok = (l.is_numeric_scalar() && r.is_numeric_scalar()) ||
                          (l.kind == TypeKind::String && r.kind == TypeKind::String) ||
                          (l.kind == TypeKind::Bool && r.kind == TypeKind::Bool);
          if (!ok) type_fail(e, "incomparable operands");
          return DType::boolean();
        } else if constexpr (std::is_same_v<T, Logical>) {
          if (k.op == LogicalOp::Not) expect_arity(e, 1);
          else if (e.args().empty()) fail(ErrorCode::ArityMismatch, "empty logical expression");
          for (const auto& a : e.args())
            if (type_of(*a, input).kind != TypeKind::Bool) type_fail(e, "logical operand is not bool");
          return DType::boolean();
        } else if constexpr (std::is_same_v<T, MLCall>) {
          std::vector<DType> types;
          for (const auto& a : e.args()) types.push_back(type_of(*a, input));
          return ml_output_type(k.fn, k.attrs, types);
        } else {
          return func_type(e, k, input);
        }
      },
      e.kind());
}

json expr_to_json(const Expr& e) {
  json j = e.local_json();
  if (!e.args().empty() || e.is<Func>() || e.is<MLCall>() || e.is<Logical>() || e.is<Arith>() || e.is<Compare>()) {
    json args = json::array();
    for (const auto& a : e.args()) args.push_back(expr_to_json(*a));
    j["args"] = std::move(args);
  }
  return j;
}

ExprPtr expr_from_json(const json& j, const std::string& location) {
  try {
    if (!j.is_object()) fail(ErrorCode::ParseError, "expression must be an object", location);
    const std::string kind = j.at("kind").get<std::string>();
    std::vector<ExprPtr> args;
    if (j.contains("args")) {
      if (!j["args"].is_array()) fail(ErrorCode::ParseError, "args must be an array", location);
      for (std::size_t i = 0; i < j["args"].size(); ++i)
        args.push_back(expr_from_json(j["args"][i], location + "/args/" + std::to_string(i)));
    }
    if (kind == "column") return col(j.at("name").get<std::string>());
    if (kind == "literal") {
      const DType t = DType::parse(j.at("dtype").get<std::string>());
      return lit(value_from_json(j.at("value"), t));
    }
    if (kind == "arith") {
      const auto op = j.at("op").get<std::string>();
      for (int i = 0; i < 4; ++i)
        if (arith_op_symbol(static_cast<ArithOp>(i)) == op) {
          if (args.size() != 2) fail(ErrorCode::ParseError, "arith needs two operands", location);
          return arith(static_cast<ArithOp>(i), args[0], args[1]);
        }
      fail(ErrorCode::ParseError, "unknown arith op '" + op + "'", location);
    }
    if (kind == "compare") {
      const auto op = j.at("op").get<std::string>();
      for (int i = 0; i < 6; ++i)
        if (compare_op_symbol(static_cast<CompareOp>(i)) == op) {
          if (args.size() != 2) fail(ErrorCode::ParseError, "compare needs two operands", location);
          return cmp(static_cast<CompareOp>(i), args[0], args[1]);
        }
      fail(ErrorCode::ParseError, "unknown compare op '" + op + "'", location);
    }
    if (kind == "logical") {
      const auto op = j.at("op").get<std::string>();
      for (int i = 0; i < 3; ++i)
        if (logical_op_name(static_cast<LogicalOp>(i)) == op) return logical(static_cast<LogicalOp>(i), std::move(args));
      fail(ErrorCode::ParseError, "unknown logical op '" + op + "'", location);
    }
    if (kind == "ml") {
      const MLFunctionId fn = ml_function_from_name(j.at("fn").get<std::string>());
      MLAttrs attrs = j.contains("attrs") ? attrs_from_json(j["attrs"]) : MLAttrs{};
      return ml(fn, std::move(args), std::move(attrs));
    }
    if (kind == "func") return func(j.at("name").get<std::string>(), std::move(args));
    fail(ErrorCode::ParseError, "unknown expression kind '" + kind + "'", location);
  } catch (const json::exception& ex) {
    fail(ErrorCode::ParseError, std::string("malformed expression: ") + ex.what(), location);
  } catch (const Error& ex) {
    if (ex.code() == ErrorCode::ParseError && !ex.detail().empty()) throw;
    fail(ErrorCode::ParseError, ex.message(), location);
  }
}

}  // namespace optbench
