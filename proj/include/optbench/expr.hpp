#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "optbench/models.hpp"
#include "optbench/value.hpp"

namespace optbench {

enum class MLFunctionId {
  MatrixMultiply,
  MatrixAddition,
  Conv2d,
  Softmax,
  Sigmoid,
  Relu,
  Distance,
  CosineSim,
  Argmax,
  FusedDnn,
  MinMaxScaler,
  OneHotEncoder,
  KMeans,
  NaiveBayes,
  Llm,
  DecisionTree,
  DecisionForest,
};

inline constexpr int kNumMLFunctions = 17;

std::string_view ml_function_name(MLFunctionId fn);
MLFunctionId ml_function_from_name(std::string_view name);  // throws ParseError
std::vector<MLFunctionId> all_ml_functions();

enum class KernelMode { Dense, Sparse };
enum class Activation { Identity, Relu, Sigmoid, Softmax };
enum class DistanceMetric { L2, L1 };

std::string_view activation_name(Activation a);
Activation activation_from_name(std::string_view name);

/// One affine layer act(h W + b) inside a fused network.
struct LayerSpec {
  std::string weight_model;
  std::string bias_model;
  Activation activation = Activation::Identity;
  int in_dim = 0;
  int out_dim = 0;
  KernelMode kernel_mode = KernelMode::Dense;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct FilterSpec {
  int count = 0;
  int height = 0;
  int width = 0;
  friend bool operator==(const FilterSpec&, const FilterSpec&) = default;
};

struct MLAttrs {
  std::optional<std::string> model_id;
  std::optional<std::pair<int, int>> weight_shape;
  /// Row range [begin, end) of the referenced weight matrix; set by factorization.
  std::optional<std::pair<int, int>> weight_rows;
  std::optional<int> bias_shape;
  std::optional<KernelMode> kernel_mode;  // matrix_multiply only; absent means dense
  std::vector<LayerSpec> layers;          // fused_dnn, innermost first
  std::shared_ptr<const TreeEnsemble> tree_spec;
  std::optional<FilterSpec> filter_spec;
  std::optional<int> out_dim;  // one_hot_encoder vocabulary size
  std::optional<DistanceMetric> metric;

  KernelMode mode() const { return kernel_mode.value_or(KernelMode::Dense); }
  bool operator==(const MLAttrs& o) const;
};

nlohmann::json attrs_to_json(const MLAttrs& a);
MLAttrs attrs_from_json(const nlohmann::json& j);

enum class ArithOp { Add, Sub, Mul, Div };
enum class CompareOp { Eq, Ne, Lt, Le, Gt, Ge };
enum class LogicalOp { And, Or, Not };

std::string_view arith_op_symbol(ArithOp op);
std::string_view compare_op_symbol(CompareOp op);
std::string_view logical_op_name(LogicalOp op);
CompareOp flip(CompareOp op);  // a op b  <=>  b flip(op) a

struct ColumnRef {
  std::string name;
};
struct Literal {
  Value value;
};
struct Arith {
  ArithOp op;
};
struct Compare {
  CompareOp op;
};
struct Logical {
  LogicalOp op;
};
struct MLCall {
  MLFunctionId fn;
  MLAttrs attrs;
};
/// Non-ML scalar built-ins: concat, element, flatten, im2col, fold_maps, row_id,
/// to_double, to_int.
struct Func {
  std::string name;
};

class Expr;
using ExprPtr = std::shared_ptr<const Expr>;

/// Immutable expression tree node. Operands live in `args` for every kind so
/// traversals are uniform. The structural hash is computed at construction.
class Expr {
 public:
  using Kind = std::variant<ColumnRef, Literal, Arith, Compare, Logical, MLCall, Func>;

  Expr(Kind kind, std::vector<ExprPtr> args);

  const Kind& kind() const { return kind_; }
  const std::vector<ExprPtr>& args() const { return args_; }
  const ExprPtr& arg(std::size_t i) const { return args_.at(i); }
  std::uint64_t hash() const { return hash_; }

  template <typename T>
  const T* as() const { return std::get_if<T>(&kind_); }
  template <typename T>
  bool is() const { return std::holds_alternative<T>(kind_); }

  bool is_ml(MLFunctionId fn) const {
    auto* c = as<MLCall>();
    return c && c->fn == fn;
  }
  bool is_func(std::string_view name) const {
    auto* f = as<Func>();
    return f && f->name == name;
  }

  /// Node-local canonical JSON (without operands).
  nlohmann::json local_json() const;
  std::string to_string() const;

 private:
  Kind kind_;
  std::vector<ExprPtr> args_;
  std::uint64_t hash_;
};

// Builders.
ExprPtr col(std::string name);
ExprPtr lit(Value v);
ExprPtr arith(ArithOp op, ExprPtr l, ExprPtr r);
ExprPtr cmp(CompareOp op, ExprPtr l, ExprPtr r);
ExprPtr logical(LogicalOp op, std::vector<ExprPtr> args);
ExprPtr conj(std::vector<ExprPtr> args);
ExprPtr ml(MLFunctionId fn, std::vector<ExprPtr> args, MLAttrs attrs = {});
ExprPtr func(std::string name, std::vector<ExprPtr> args);
ExprPtr with_args(const Expr& e, std::vector<ExprPtr> args);

bool contains_ml(const Expr& e);
void collect_columns(const Expr& e, std::vector<std::string>& out);
std::vector<std::string> free_columns(const Expr& e);
bool is_deterministic(const Expr& e);
/// Splits a conjunction into its conjuncts (a non-AND expression yields itself).
std::vector<ExprPtr> conjuncts(const ExprPtr& e);
/// Pre-order visit; path strings look like "a0.a2".
void visit_ml_calls(const ExprPtr& e, const std::string& path,
                    const std::function<void(const ExprPtr&, const std::string&)>& fn);

/// Deep structural equality (hash-equal for well-formed trees; checked fully).
bool structurally_equal(const Expr& a, const Expr& b);

/// Output type of an expression over an input schema. Throws UnresolvedColumn,
/// ArityMismatch or TypeMismatch.
DType type_of(const Expr& e, const Schema& input);

nlohmann::json expr_to_json(const Expr& e);
ExprPtr expr_from_json(const nlohmann::json& j, const std::string& location);

}  // namespace optbench
