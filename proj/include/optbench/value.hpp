#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "optbench/errors.hpp"

namespace optbench {

enum class TypeKind { Int64, Float64, String, Bool, Vector, Matrix };

/// Cell data type. Vector and matrix types carry static, positive dimensions.
struct DType {
  TypeKind kind = TypeKind::Int64;
  int rows = 0;  // matrix rows; unused otherwise
  int cols = 0;  // vector length or matrix columns

  static DType int64() { return {TypeKind::Int64, 0, 0}; }
  static DType float64() { return {TypeKind::Float64, 0, 0}; }
  static DType string() { return {TypeKind::String, 0, 0}; }
  static DType boolean() { return {TypeKind::Bool, 0, 0}; }
  static DType vector(int dim);
  static DType matrix(int rows, int cols);

  int dim() const { return cols; }
  bool is_numeric_scalar() const { return kind == TypeKind::Int64 || kind == TypeKind::Float64; }
  bool is_tensor() const { return kind == TypeKind::Vector || kind == TypeKind::Matrix; }
  /// Number of float elements a value of this type contributes to a feature vector.
  int element_count() const;

  std::string to_string() const;
  static DType parse(std::string_view text);

  friend bool operator==(const DType&, const DType&) = default;
};

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
};

using VectorPtr = std::shared_ptr<const std::vector<double>>;
using MatrixPtr = std::shared_ptr<const Matrix>;

/// A single cell. Tensors are held by shared pointer so copying rows through
/// joins stays cheap; they are never mutated after construction.
class Value {
 public:
  using Storage = std::variant<std::int64_t, double, std::string, bool, VectorPtr, MatrixPtr>;

  Value() : v_(std::int64_t{0}) {}
  Value(std::int64_t x) : v_(x) {}
  Value(int x) : v_(static_cast<std::int64_t>(x)) {}
  Value(double x) : v_(x) {}
  Value(std::string s) : v_(std::move(s)) {}
  Value(const char* s) : v_(std::string(s)) {}
  Value(bool b) : v_(b) {}
  Value(std::vector<double> v) : v_(std::make_shared<const std::vector<double>>(std::move(v))) {}
  Value(VectorPtr v) : v_(std::move(v)) {}
  Value(Matrix m) : v_(std::make_shared<const Matrix>(std::move(m))) {}
  Value(MatrixPtr m) : v_(std::move(m)) {}

  TypeKind kind() const;
  bool is_int() const { return std::holds_alternative<std::int64_t>(v_); }
  bool is_double() const { return std::holds_alternative<double>(v_); }
  bool is_numeric() const { return is_int() || is_double(); }
  bool is_string() const { return std::holds_alternative<std::string>(v_); }
  bool is_bool() const { return std::holds_alternative<bool>(v_); }
  bool is_vector() const { return std::holds_alternative<VectorPtr>(v_); }
  bool is_matrix() const { return std::holds_alternative<MatrixPtr>(v_); }

  std::int64_t as_int() const;
  /// Numeric coercion: ints and bools widen to double.
  double as_double() const;
  const std::string& as_string() const;
  bool as_bool() const;
  const std::vector<double>& vec() const;
  const VectorPtr& vec_ptr() const { return std::get<VectorPtr>(v_); }
  const Matrix& mat() const;

  /// Actual dtype of this value (dimensions included).
  DType dtype() const;
  bool conforms_to(const DType& t) const;

  const Storage& storage() const { return v_; }

  std::string to_string() const;
  std::uint64_t hash() const;

  friend bool operator==(const Value& a, const Value& b);

 private:
  Storage v_;
};

struct Column {
  std::string name;
  DType dtype;
  friend bool operator==(const Column&, const Column&) = default;
};

class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<Column> columns);

  const std::vector<Column>& columns() const { return columns_; }
  std::size_t size() const { return columns_.size(); }
  bool empty() const { return columns_.empty(); }
  const Column& operator[](std::size_t i) const { return columns_[i]; }

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;  // throws UnresolvedColumn
  bool contains(std::string_view name) const { return find(name).has_value(); }

  Schema concat(const Schema& other) const;
  std::string to_string() const;

  friend bool operator==(const Schema&, const Schema&) = default;

 private:
  std::vector<Column> columns_;
};

/// 64-bit FNV-1a with a murmur finalizer; stable across runs and platforms.
std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed = 0);
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);
std::string hex64(std::uint64_t v);

}  // namespace optbench
