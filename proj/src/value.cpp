#include "optbench/value.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace optbench {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnresolvedColumn: return "UnresolvedColumn";
    case ErrorCode::ArityMismatch: return "ArityMismatch";
    case ErrorCode::TypeMismatch: return "TypeMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownModel: return "UnknownModel";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::UnknownTable: return "UnknownTable";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::NonNumericFeature: return "NonNumericFeature";
    case ErrorCode::RewriteProducedInvalidPlan: return "RewriteProducedInvalidPlan";
    case ErrorCode::NotApplicable: return "NotApplicable";
    case ErrorCode::UnsupportedConvConfig: return "UnsupportedConvConfig";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::UnknownAction: return "UnknownAction";
    case ErrorCode::UnknownStatistic: return "UnknownStatistic";
    case ErrorCode::UnknownOptimizer: return "UnknownOptimizer";
    case ErrorCode::MissingStats: return "MissingStats";
    case ErrorCode::TypeError: return "TypeError";
    case ErrorCode::DivergentSchema: return "DivergentSchema";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::UnknownQuery: return "UnknownQuery";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::OptimizerFailed: return "OptimizerFailed";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

DType DType::vector(int dim) {
  if (dim <= 0) fail(ErrorCode::ValidationError, "vector dimension must be positive");
  return {TypeKind::Vector, 0, dim};
}

DType DType::matrix(int rows, int cols) {
  if (rows <= 0 || cols <= 0) fail(ErrorCode::ValidationError, "matrix dimensions must be positive");
  return {TypeKind::Matrix, rows, cols};
}

int DType::element_count() const {
  switch (kind) {
    case TypeKind::Int64:
    case TypeKind::Float64:
    case TypeKind::Bool: return 1;
    case TypeKind::Vector: return cols;
    case TypeKind::Matrix: return rows * cols;
    case TypeKind::String: return 0;
  }
  return 0;
}

std::string DType::to_string() const {
  switch (kind) {
    case TypeKind::Int64: return "int64";
    case TypeKind::Float64: return "float64";
    case TypeKind::String: return "string";
    case TypeKind::Bool: return "bool";
    case TypeKind::Vector: return "vector(" + std::to_string(cols) + ")";
    case TypeKind::Matrix: return "matrix(" + std::to_string(rows) + "," + std::to_string(cols) + ")";
  }
  return "?";
}

namespace {

int parse_positive(std::string_view s, std::string_view whole) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v <= 0)
    fail(ErrorCode::ParseError, "bad dimension in dtype '" + std::string(whole) + "'");
  return v;
}

}  // namespace

DType DType::parse(std::string_view text) {
  if (text == "int64") return int64();
  if (text == "float64") return float64();
  if (text == "string") return string();
  if (text == "bool") return boolean();
  auto inner = [&](std::string_view prefix) -> std::optional<std::string_view> {
    if (text.substr(0, prefix.size()) != prefix || text.back() != ')') return std::nullopt;
    return text.substr(prefix.size(), text.size() - prefix.size() - 1);
  };
  if (auto v = inner("vector(")) return vector(parse_positive(*v, text));
  if (auto m = inner("matrix(")) {
    auto comma = m->find(',');
    if (comma == std::string_view::npos) fail(ErrorCode::ParseError, "bad matrix dtype '" + std::string(text) + "'");
    return matrix(parse_positive(m->substr(0, comma), text), parse_positive(m->substr(comma + 1), text));
  }
  fail(ErrorCode::ParseError, "unknown dtype '" + std::string(text) + "'");
}

TypeKind Value::kind() const {
  switch (v_.index()) {
    case 0: return TypeKind::Int64;
    case 1: return TypeKind::Float64;
    case 2: return TypeKind::String;
    case 3: return TypeKind::Bool;
    case 4: return TypeKind::Vector;
    default: return TypeKind::Matrix;
  }
}

std::int64_t Value::as_int() const {
  if (auto* i = std::get_if<std::int64_t>(&v_)) return *i;
  if (auto* b = std::get_if<bool>(&v_)) return *b ? 1 : 0;
  if (auto* d = std::get_if<double>(&v_)) return static_cast<std::int64_t>(*d);
  fail(ErrorCode::TypeError, "value " + to_string() + " is not an integer");
}

double Value::as_double() const {
  if (auto* d = std::get_if<double>(&v_)) return *d;
  if (auto* i = std::get_if<std::int64_t>(&v_)) return static_cast<double>(*i);
  if (auto* b = std::get_if<bool>(&v_)) return *b ? 1.0 : 0.0;
  fail(ErrorCode::TypeError, "value " + to_string() + " is not numeric");
}

const std::string& Value::as_string() const {
  if (auto* s = std::get_if<std::string>(&v_)) return *s;
  fail(ErrorCode::TypeError, "value is not a string");
}

bool Value::as_bool() const {
  if (auto* b = std::get_if<bool>(&v_)) return *b;
  fail(ErrorCode::TypeError, "value " + to_string() + " is not a bool");
}

const std::vector<double>& Value::vec() const {
  if (auto* v = std::get_if<VectorPtr>(&v_)) return **v;
  fail(ErrorCode::TypeError, "value " + to_string() + " is not a vector");
}

const Matrix& Value::mat() const {
  if (auto* m = std::get_if<MatrixPtr>(&v_)) return **m;
  fail(ErrorCode::TypeError, "value is not a matrix");
}

DType Value::dtype() const {
  switch (kind()) {
    case TypeKind::Int64: return DType::int64();
    case TypeKind::Float64: return DType::float64();
    case TypeKind::String: return DType::string();
    case TypeKind::Bool: return DType::boolean();
    case TypeKind::Vector: return {TypeKind::Vector, 0, static_cast<int>(vec().size())};
    case TypeKind::Matrix: return {TypeKind::Matrix, mat().rows, mat().cols};
  }
  return {};
}

bool Value::conforms_to(const DType& t) const { return dtype() == t; }

std::string Value::to_string() const {
  std::ostringstream os;
  os.precision(17);
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::int64_t> || std::is_same_v<T, double>) {
          os << x;
        } else if constexpr (std::is_same_v<T, std::string>) {
          os << '"' << x << '"';
        } else if constexpr (std::is_same_v<T, bool>) {
          os << (x ? "true" : "false");
        } else if constexpr (std::is_same_v<T, VectorPtr>) {
          os << '[';
          for (std::size_t i = 0; i < x->size(); ++i) os << (i ? "," : "") << (*x)[i];
          os << ']';
        } else {
          os << "matrix(" << x->rows << "x" << x->cols << ")";
        }
      },
      v_);
  return os.str();
}

namespace {

std::uint64_t fmix64(std::uint64_t k) {
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdULL;
  k ^= k >> 33;
  k *= 0xc4ceb9fe1a85ec53ULL;
  k ^= k >> 33;
  return k;
}

std::uint64_t hash_doubles(const std::vector<double>& d, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (double x : d) {
    if (x == 0.0) x = 0.0;  // fold -0
    h = hash_combine(h, std::bit_cast<std::uint64_t>(x));
  }
  return h;
}

}  // namespace

std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmix64(h);
}

std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return fmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t Value::hash() const {
  const auto tag = static_cast<std::uint64_t>(v_.index()) + 1;
  return std::visit(
      [&](const auto& x) -> std::uint64_t {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::int64_t>) {
          return hash_combine(tag, static_cast<std::uint64_t>(x));
        } else if constexpr (std::is_same_v<T, double>) {
          double y = x == 0.0 ? 0.0 : x;
          return hash_combine(tag, std::bit_cast<std::uint64_t>(y));
        } else if constexpr (std::is_same_v<T, std::string>) {
          return hash_combine(tag, stable_hash(x));
        } else if constexpr (std::is_same_v<T, bool>) {
          return hash_combine(tag, x ? 1 : 0);
        } else if constexpr (std::is_same_v<T, VectorPtr>) {
          return hash_doubles(*x, tag);
        } else {
          return hash_doubles(x->data, hash_combine(tag, (static_cast<std::uint64_t>(x->rows) << 32) | x->cols));
        }
      },
      v_);
}

bool operator==(const Value& a, const Value& b) {
  if (a.v_.index() != b.v_.index()) return false;
  if (a.is_vector()) return a.vec() == b.vec();
  if (a.is_matrix()) {
    const auto& x = a.mat();
    const auto& y = b.mat();
    return x.rows == y.rows && x.cols == y.cols && x.data == y.data;
  }
  return a.v_ == b.v_;
}

Schema::Schema(std::vector<Column> columns) : columns_(std::move(columns)) {
  for (std::size_t i = 0; i < columns_.size(); ++i)
    for (std::size_t j = i + 1; j < columns_.size(); ++j)
      if (columns_[i].name == columns_[j].name)
        fail(ErrorCode::ValidationError, "duplicate column name '" + columns_[i].name + "'");
}

std::optional<std::size_t> Schema::find(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i)
    if (columns_[i].name == name) return i;
  return std::nullopt;
}

std::size_t Schema::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  fail(ErrorCode::UnresolvedColumn, "column '" + std::string(name) + "' not found in " + to_string(),
       std::string(name));
}

Schema Schema::concat(const Schema& other) const {
  std::vector<Column> cols = columns_;
  cols.insert(cols.end(), other.columns_.begin(), other.columns_.end());
  return Schema(std::move(cols));
}

std::string Schema::to_string() const {
  std::string s = "(";
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (i) s += ", ";
    s += columns_[i].name + ":" + columns_[i].dtype.to_string();
  }
  return s + ")";
}

}  // namespace optbench
