#include "optbench/ml_kernels.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace optbench {

namespace {

using F = MLFunctionId;

constexpr MLSignature kSignatures[] = {
    {F::MatrixMultiply, 1, 1, "x: vector(k) | matrix(m,k); weights via model_id", "vector(n) | matrix(m,n)"},
    {F::MatrixAddition, 1, 2, "x: vector(d) [, y: vector(d)]; optional bias via model_id", "vector(d)"},
    {F::Conv2d, 1, 1, "image: matrix(h,w); filter bank via model_id", "matrix(F*oh, ow)"},
    {F::Softmax, 1, 1, "x: vector(d)", "vector(d)"},
    {F::Sigmoid, 1, 1, "x: number | vector | matrix", "same shape (float64 for scalars)"},
    {F::Relu, 1, 1, "x: number | vector | matrix", "same shape (float64 for scalars)"},
    {F::Distance, 2, 2, "a: vector(d), b: vector(d)", "float64"},
    {F::CosineSim, 2, 2, "a: vector(d), b: vector(d)", "float64"},
    {F::Argmax, 1, 1, "x: vector(d)", "int64"},
    {F::FusedDnn, 1, 1, "x: vector(in); layers in attrs", "vector(out)"},
    {F::MinMaxScaler, 1, 1, "x: vector(d); scaler via model_id", "vector(d)"},
    {F::OneHotEncoder, 1, 1, "x: string | int64; encoder via model_id", "vector(out_dim)"},
    {F::KMeans, 1, 1, "x: vector(d); centroids via model_id", "int64"},
    {F::NaiveBayes, 1, 1, "text: string; tables via model_id", "int64"},
    {F::Llm, 1, -1, "prompt: string, args...", "string"},
    {F::DecisionTree, 1, 2, "x: vector(d) [, tree_id: int64]; tree_spec in attrs", "float64"},
    {F::DecisionForest, 1, 1, "x: vector(d); tree_spec in attrs", "float64"},
};

std::string fname(F fn) { return std::string(ml_function_name(fn)); }

[[noreturn]] void type_error(F fn, const std::string& why) {
  fail(ErrorCode::TypeMismatch, fname(fn) + ": " + why);
}
[[noreturn]] void shape_error(F fn, const std::string& why) {
  fail(ErrorCode::ShapeMismatch, fname(fn) + ": " + why);
}

int effective_k(F fn, const MLAttrs& a) {
  if (!a.weight_shape) type_error(fn, "missing weight_shape attr");
  if (a.weight_rows) {
    const auto [b, e] = *a.weight_rows;
    if (b < 0 || e <= b || e > a.weight_shape->first) shape_error(fn, "weight_rows outside weight_shape");
    return e - b;
  }
  return a.weight_shape->first;
}

void check_layers(const MLAttrs& a) {
  if (a.layers.empty()) type_error(F::FusedDnn, "no layers");
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].in_dim <= 0 || a.layers[i].out_dim <= 0) shape_error(F::FusedDnn, "non-positive layer dims");
    if (i > 0 && a.layers[i].in_dim != a.layers[i - 1].out_dim)
      shape_error(F::FusedDnn, "layer " + std::to_string(i) + " input does not match previous output");
  }
}

double activation_flops(Activation act, int n) {
  switch (act) {
    case Activation::Identity: return 0.0;
    case Activation::Relu:
    case Activation::Sigmoid: return n;
    case Activation::Softmax: return 3.0 * n;
  }
  return 0.0;
}

/// Placeholder argument types for calls whose cost is fixed by attrs alone.
std::vector<DType> implied_arg_types(F fn, const MLAttrs& a) {
  switch (fn) {
    case F::MatrixMultiply: return {DType::vector(effective_k(fn, a))};
    case F::FusedDnn: check_layers(a); return {DType::vector(a.layers.front().in_dim)};
    case F::MatrixAddition:
      if (!a.bias_shape) break;
      return {DType::vector(*a.bias_shape)};
    case F::DecisionTree:
    case F::DecisionForest:
      if (!a.tree_spec) break;
      return {DType::vector(std::max(1, a.tree_spec->num_features))};
    case F::Llm: return {DType::string()};
    case F::NaiveBayes: return {DType::string()};
    default: break;
  }
  fail(ErrorCode::ShapeMismatch, fname(fn) + ": argument types are needed to derive its shape");
}

}  // namespace

const MLSignature& ml_signature(MLFunctionId fn) { return kSignatures[static_cast<int>(fn)]; }

DType ml_output_type(MLFunctionId fn, const MLAttrs& a, std::span<const DType> t) {
  const auto& sig = ml_signature(fn);
  const int n = static_cast<int>(t.size());
  if (n < sig.min_args || (sig.max_args >= 0 && n > sig.max_args))
    fail(ErrorCode::ArityMismatch, fname(fn) + " takes " + std::string(sig.arguments) + "; got " +
                                       std::to_string(n) + " arguments");
  if (a.kernel_mode && fn != F::MatrixMultiply) type_error(fn, "kernel_mode is only valid on matrix_multiply");
  const bool is_tree = fn == F::DecisionTree || fn == F::DecisionForest;
  if (is_tree != static_cast<bool>(a.tree_spec))
    type_error(fn, is_tree ? "missing tree_spec attr" : "tree_spec is only valid on tree functions");

  auto want_vector = [&](const DType& d) {
    if (d.kind != TypeKind::Vector) type_error(fn, "expected a vector argument, got " + d.to_string());
  };

  switch (fn) {
    case F::MatrixMultiply: {
      const int k = effective_k(fn, a), cols = a.weight_shape->second;
      if (t[0].kind == TypeKind::Vector) {
        if (t[0].cols != k) shape_error(fn, "input length " + std::to_string(t[0].cols) + " vs k=" + std::to_string(k));
        return DType::vector(cols);
      }
      if (t[0].kind == TypeKind::Matrix) {
        if (t[0].cols != k) shape_error(fn, "input columns " + std::to_string(t[0].cols) + " vs k=" + std::to_string(k));
        return DType::matrix(t[0].rows, cols);
      }
      type_error(fn, "expected a vector or matrix argument");
    }
    case F::MatrixAddition: {
      want_vector(t[0]);
      if (n == 2) {
        want_vector(t[1]);
        if (t[1].cols != t[0].cols) shape_error(fn, "operand lengths differ");
      } else if (!a.model_id) {
        type_error(fn, "single-argument form needs a bias model");
      }
      if (a.bias_shape && *a.bias_shape != t[0].cols) shape_error(fn, "bias length differs from input");
      return t[0];
    }
    case F::Conv2d: {
      if (!a.filter_spec) type_error(fn, "missing filter_spec attr");
      if (t[0].kind != TypeKind::Matrix) type_error(fn, "expected a matrix image");
      const auto& fs = *a.filter_spec;
      if (fs.count <= 0 || fs.height <= 0 || fs.width <= 0) shape_error(fn, "non-positive filter_spec");
      if (fs.height > t[0].rows || fs.width > t[0].cols) shape_error(fn, "filter larger than image");
      const int oh = t[0].rows - fs.height + 1, ow = t[0].cols - fs.width + 1;
      return DType::matrix(fs.count * oh, ow);
    }
    case F::Softmax: want_vector(t[0]); return t[0];
    case F::Sigmoid:
    case F::Relu:
      if (t[0].is_numeric_scalar()) return DType::float64();
      if (t[0].is_tensor()) return t[0];
      type_error(fn, "expected a numeric argument");
    case F::Distance:
    case F::CosineSim:
      want_vector(t[0]);
      want_vector(t[1]);
      if (t[0].cols != t[1].cols) shape_error(fn, "operand lengths differ");
      return DType::float64();
    case F::Argmax: want_vector(t[0]); return DType::int64();
    case F::FusedDnn:
      check_layers(a);
      want_vector(t[0]);
      if (t[0].cols != a.layers.front().in_dim) shape_error(fn, "input length differs from first layer");
      return DType::vector(a.layers.back().out_dim);
    case F::MinMaxScaler: want_vector(t[0]); return t[0];
    case F::OneHotEncoder:
      if (!a.out_dim || *a.out_dim <= 0) type_error(fn, "missing out_dim attr");
      if (t[0].kind != TypeKind::String && t[0].kind != TypeKind::Int64) type_error(fn, "expected string or int64");
      return DType::vector(*a.out_dim);
    case F::KMeans: want_vector(t[0]); return DType::int64();
    case F::NaiveBayes:
      if (t[0].kind != TypeKind::String) type_error(fn, "expected a string argument");
      return DType::int64();
    case F::Llm:
      if (t[0].kind != TypeKind::String) type_error(fn, "prompt must be a string");
      return DType::string();
    case F::DecisionTree:
    case F::DecisionForest:
      want_vector(t[0]);
      if (t[0].cols < a.tree_spec->num_features) shape_error(fn, "fewer features than the trees use");
      if (n == 2 && t[1].kind != TypeKind::Int64) type_error(fn, "tree_id must be int64");
      return DType::float64();
  }
  fail(ErrorCode::Internal, "unhandled ML function");
}

ShapeInfo get_shape(MLFunctionId fn, const MLAttrs& a, const ModelStore& models, std::span<const DType> arg_types) {
  std::vector<DType> implied;
  if (arg_types.empty()) {
    implied = implied_arg_types(fn, a);
    arg_types = implied;
  }
  ShapeInfo s;
  s.out_shape = ml_output_type(fn, a, arg_types);
  const DType& in = arg_types[0];
  const double d = in.element_count();
  switch (fn) {
    case F::MatrixMultiply: {
      if (a.model_id) models.get(*a.model_id);
      const double m = in.kind == TypeKind::Matrix ? in.rows : 1.0;
      const double k = effective_k(fn, a), n = a.weight_shape->second;
      s.flops = 2.0 * m * k * n;
      s.num_parameters = k * n;
      break;
    }
    case F::MatrixAddition:
      // one add per element per extra addend
      s.flops = d * static_cast<double>(arg_types.size() - 1 + (a.model_id ? 1 : 0));
      if (a.model_id) s.num_parameters = static_cast<double>(models.get_as<BiasVector>(*a.model_id).data.size());
      break;
    case F::Conv2d: {
      const auto& fs = *a.filter_spec;
      const double oh = in.rows - fs.height + 1, ow = in.cols - fs.width + 1;
      s.flops = 2.0 * fs.count * oh * ow * fs.height * fs.width;
      s.num_parameters = static_cast<double>(fs.count) * fs.height * fs.width;
      break;
    }
    case F::Softmax: s.flops = 3.0 * d; break;
    case F::Sigmoid:
    case F::Relu: s.flops = d; break;
    case F::Distance: s.flops = 3.0 * d; break;
    case F::CosineSim: s.flops = 6.0 * d; break;
    case F::Argmax: s.flops = d; break;
    case F::FusedDnn:
      for (const auto& l : a.layers) {
        s.flops += 2.0 * l.in_dim * l.out_dim + l.out_dim + activation_flops(l.activation, l.out_dim);
        s.num_parameters += static_cast<double>(l.in_dim) * l.out_dim + l.out_dim;
      }
      break;
    case F::MinMaxScaler:
      s.flops = 2.0 * d;
      s.num_parameters = 2.0 * d;
      break;
    case F::OneHotEncoder:
      s.flops = *a.out_dim;
      s.num_parameters = *a.out_dim;
      break;
    case F::KMeans: {
      const auto& km = models.get_as<KMeansModel>(a.model_id.value_or(""));
      s.flops = 3.0 * km.k * km.dim;
      s.num_parameters = static_cast<double>(km.k) * km.dim;
      break;
    }
    case F::NaiveBayes: {
      const auto& nb = models.get_as<NaiveBayesModel>(a.model_id.value_or(""));
      const double vocab = static_cast<double>(nb.log_likelihood.size());
      s.flops = 2.0 * vocab;
      s.num_parameters = 2.0 * vocab + 2.0;
      break;
    }
    case F::Llm: s.flops = 1e6; break;
    case F::DecisionTree:
    case F::DecisionForest: {
      const auto& e = *a.tree_spec;
      if (fn == F::DecisionTree && arg_types.size() == 2) {
        int depth = 0;
        for (const auto& t : e.trees) depth = std::max(depth, t.depth());
        s.flops = depth;
      } else {
        for (const auto& t : e.trees) s.flops += t.depth();
      }
      s.num_parameters = static_cast<double>(e.node_count());
      s.forest_num_trees = static_cast<int>(e.trees.size());
      break;
    }
  }
  return s;
}

CsrMatrix CsrMatrix::from_dense(std::span<const double> data, int rows, int cols) {
  CsrMatrix c;
  c.rows = rows;
  c.cols = cols;
  c.row_ptr.reserve(rows + 1);
  c.row_ptr.push_back(0);
  for (int r = 0; r < rows; ++r) {
    const double* row = data.data() + static_cast<std::size_t>(r) * cols;
    for (int k = 0; k < cols; ++k)
      if (row[k] != 0.0) {
        c.col_idx.push_back(k);
        c.values.push_back(row[k]);
      }
    c.row_ptr.push_back(static_cast<int>(c.values.size()));
  }
  return c;
}

std::vector<double> matmul_dense(std::span<const double> x, int m, const WeightView& w) {
  const int k = w.rows(), n = w.cols();
  if (x.size() != static_cast<std::size_t>(m) * k) shape_error(F::MatrixMultiply, "input size does not match weights");
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    double* o = out.data() + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double xv = x[static_cast<std::size_t>(i) * k + kk];
      const double* wrow = w.w->data.data() + static_cast<std::size_t>(w.row_begin + kk) * n;
      for (int j = 0; j < n; ++j) o[j] += xv * wrow[j];
    }
  }
  return out;
}

std::vector<double> matmul_sparse(std::span<const double> x, int m, const WeightView& w) {
  const int k = w.rows(), n = w.cols();
  if (x.size() != static_cast<std::size_t>(m) * k) shape_error(F::MatrixMultiply, "input size does not match weights");
  const CsrMatrix csr = CsrMatrix::from_dense(x, m, k);
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    double* o = out.data() + static_cast<std::size_t>(i) * n;
    for (int p = csr.row_ptr[i]; p < csr.row_ptr[i + 1]; ++p) {
      const double xv = csr.values[p];
      const double* wrow = w.w->data.data() + static_cast<std::size_t>(w.row_begin + csr.col_idx[p]) * n;
      for (int j = 0; j < n; ++j) o[j] += xv * wrow[j];
    }
  }
  return out;
}

Matrix conv2d_direct(const Matrix& image, const FilterBank& f) {
  if (f.height > image.rows || f.width > image.cols) shape_error(F::Conv2d, "filter larger than image");
  const int oh = image.rows - f.height + 1, ow = image.cols - f.width + 1;
  Matrix out{f.count * oh, ow, std::vector<double>(static_cast<std::size_t>(f.count) * oh * ow, 0.0)};
  for (int k = 0; k < f.count; ++k)
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        double acc = 0.0;
        for (int i = 0; i < f.height; ++i)
          for (int j = 0; j < f.width; ++j) acc += image.at(r + i, c + j) * f.at(k, i, j);
        out.at(k * oh + r, c) = acc;
      }
  return out;
}

Matrix im2col(const Matrix& image, int fh, int fw) {
  if (fh <= 0 || fw <= 0 || fh > image.rows || fw > image.cols) shape_error(F::Conv2d, "window larger than image");
  const int oh = image.rows - fh + 1, ow = image.cols - fw + 1;
  Matrix out{oh * ow, fh * fw, std::vector<double>(static_cast<std::size_t>(oh) * ow * fh * fw)};
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c)
      for (int i = 0; i < fh; ++i)
        for (int j = 0; j < fw; ++j) out.at(r * ow + c, i * fw + j) = image.at(r + i, c + j);
  return out;
}

Matrix fold_maps(const Matrix& m, int oh, int ow) {
  if (oh <= 0 || ow <= 0 || m.rows != oh * ow) shape_error(F::Conv2d, "patch count does not match output map size");
  Matrix out{m.cols * oh, ow, std::vector<double>(static_cast<std::size_t>(m.cols) * oh * ow)};
  for (int f = 0; f < m.cols; ++f)
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) out.at(f * oh + r, c) = m.at(r * ow + c, f);
  return out;
}

DenseMatrix filters_as_matrix(const FilterBank& f) {
  DenseMatrix w{f.height * f.width, f.count, std::vector<double>(static_cast<std::size_t>(f.height) * f.width * f.count)};
  for (int k = 0; k < f.count; ++k)
    for (int i = 0; i < f.height; ++i)
      for (int j = 0; j < f.width; ++j) w.data[static_cast<std::size_t>(i * f.width + j) * f.count + k] = f.at(k, i, j);
  return w;
}

Matrix conv2d_as_matmul_reference(const Matrix& image, const FilterBank& filters) {
  const Matrix patches = im2col(image, filters.height, filters.width);
  const DenseMatrix w = filters_as_matrix(filters);
  Matrix product{patches.rows, w.cols, matmul_dense(patches.data, patches.rows, WeightView{&w, 0, w.rows})};
  return fold_maps(product, image.rows - filters.height + 1, image.cols - filters.width + 1);
}

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) return {};
  const double hi = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) sum += out[i] = std::exp(v[i] - hi);
  for (auto& x : out) x /= sum;
  return out;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string llm_mock(std::span<const Value> args, std::uint64_t seed) {
  std::uint64_t h = stable_hash("llm", seed);
  for (const auto& a : args) h = hash_combine(h, a.hash());
  return (h >> 17) & 1 ? "1" : "0";
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

void check_finite(F fn, const Value& v) {
  auto bad = [&] { fail(ErrorCode::NonFiniteInput, fname(fn) + ": non-finite input"); };
  if (v.is_double()) {
    if (!std::isfinite(v.as_double())) bad();
  } else if (v.is_vector()) {
    for (double x : v.vec())
      if (!std::isfinite(x)) bad();
  } else if (v.is_matrix()) {
    for (double x : v.mat().data)
      if (!std::isfinite(x)) bad();
  }
}

double apply_scalar(Activation act, double x) {
  switch (act) {
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Sigmoid: return sigmoid(x);
    default: return x;
  }
}

void activate(Activation act, std::vector<double>& v) {
  if (act == Activation::Softmax) {
    v = softmax(v);
    return;
  }
  if (act == Activation::Identity) return;
  for (auto& x : v) x = apply_scalar(act, x);
}

Value map_elements(const Value& v, Activation act) {
  if (v.is_vector()) {
    std::vector<double> out = v.vec();
    activate(act, out);
    return Value(std::move(out));
  }
  if (v.is_matrix()) {
    Matrix m = v.mat();
    for (auto& x : m.data) x = apply_scalar(act, x);
    return Value(std::move(m));
  }
  return Value(apply_scalar(act, v.as_double()));
}

const std::vector<double>& vec_arg(F fn, const Value& v) {
  if (!v.is_vector()) type_error(fn, "expected a vector value");
  return v.vec();
}

std::string category_text(const Value& v) { return v.is_string() ? v.as_string() : v.to_string(); }

}  // namespace

BoundMLCall::BoundMLCall(MLFunctionId fn, const MLAttrs& attrs, const ModelStore& models, std::uint64_t llm_seed)
    : fn_(fn), attrs_(attrs), llm_seed_(llm_seed) {
  auto model_id = [&]() -> const std::string& {
    if (!attrs.model_id) fail(ErrorCode::UnknownModel, fname(fn) + " call has no model_id");
    return *attrs.model_id;
  };
  switch (fn) {
    case F::MatrixMultiply: {
      const auto& m = models.get(model_id());
      const DenseMatrix* w = std::get_if<DenseMatrix>(&m);
      if (!w) {
        auto* bank = std::get_if<FilterBank>(&m);
        if (!bank) fail(ErrorCode::UnknownModel, "model '" + model_id() + "' is not a weight matrix");
        owned_weights_ = std::make_shared<const DenseMatrix>(filters_as_matrix(*bank));
        w = owned_weights_.get();
      }
      if (attrs.weight_shape && (attrs.weight_shape->first != w->rows || attrs.weight_shape->second != w->cols))
        shape_error(fn, "model '" + model_id() + "' is " + std::to_string(w->rows) + "x" + std::to_string(w->cols) +
                            ", attrs say otherwise");
      weights_ = WeightView{w, 0, w->rows};
      if (attrs.weight_rows) {
        if (attrs.weight_rows->first < 0 || attrs.weight_rows->second > w->rows ||
            attrs.weight_rows->first >= attrs.weight_rows->second)
          shape_error(fn, "weight_rows out of range");
        weights_.row_begin = attrs.weight_rows->first;
        weights_.row_end = attrs.weight_rows->second;
      }
      break;
    }
    case F::MatrixAddition:
      if (attrs.model_id) bias_ = &models.get_as<BiasVector>(*attrs.model_id);
      break;
    case F::Conv2d:
      filters_ = &models.get_as<FilterBank>(model_id());
      if (attrs.filter_spec && (attrs.filter_spec->count != filters_->count ||
                                attrs.filter_spec->height != filters_->height || attrs.filter_spec->width != filters_->width))
        shape_error(fn, "filter bank differs from filter_spec");
      break;
    case F::FusedDnn:
      check_layers(attrs);
      for (const auto& l : attrs.layers) {
        const auto& w = models.get_as<DenseMatrix>(l.weight_model);
        const auto& b = models.get_as<BiasVector>(l.bias_model);
        if (w.rows != l.in_dim || w.cols != l.out_dim || static_cast<int>(b.data.size()) != l.out_dim)
          shape_error(fn, "layer model '" + l.weight_model + "' disagrees with the layer spec");
        layers_.push_back(Layer{WeightView{&w, 0, w.rows}, &b, l.activation, l.kernel_mode});
      }
      break;
    case F::MinMaxScaler: scaler_ = &models.get_as<ScalerModel>(model_id()); break;
    case F::OneHotEncoder:
      encoder_ = &models.get_as<EncoderModel>(model_id());
      if (attrs.out_dim && *attrs.out_dim != static_cast<int>(encoder_->categories.size()))
        shape_error(fn, "encoder vocabulary size differs from out_dim");
      break;
    case F::KMeans: kmeans_ = &models.get_as<KMeansModel>(model_id()); break;
    case F::NaiveBayes: nb_ = &models.get_as<NaiveBayesModel>(model_id()); break;
    case F::DecisionTree:
    case F::DecisionForest:
      if (!attrs.tree_spec) type_error(fn, "missing tree_spec attr");
      trees_ = attrs.tree_spec;
      break;
    default: break;
  }
}

Value BoundMLCall::operator()(std::span<const Value> args) const {
  const auto& sig = ml_signature(fn_);
  const int n = static_cast<int>(args.size());
  if (n < sig.min_args || (sig.max_args >= 0 && n > sig.max_args))
    fail(ErrorCode::ArityMismatch, fname(fn_) + ": wrong number of arguments");
  if (fn_ != F::Llm)
    for (const auto& a : args) check_finite(fn_, a);

  switch (fn_) {
    case F::MatrixMultiply: {
      const auto& x = args[0];
      const bool sparse = attrs_.mode() == KernelMode::Sparse;
      if (x.is_vector()) {
        const auto& v = x.vec();
        if (static_cast<int>(v.size()) != weights_.rows()) shape_error(fn_, "input length differs from weight rows");
        return Value(sparse ? matmul_sparse(v, 1, weights_) : matmul_dense(v, 1, weights_));
      }
      if (x.is_matrix()) {
        const auto& m = x.mat();
        if (m.cols != weights_.rows()) shape_error(fn_, "input columns differ from weight rows");
        return Value(Matrix{m.rows, weights_.cols(),
                            sparse ? matmul_sparse(m.data, m.rows, weights_) : matmul_dense(m.data, m.rows, weights_)});
      }
      type_error(fn_, "expected a vector or matrix value");
    }
    case F::MatrixAddition: {
      std::vector<double> out = vec_arg(fn_, args[0]);
      if (n == 2) {
        const auto& y = vec_arg(fn_, args[1]);
        if (y.size() != out.size()) shape_error(fn_, "operand lengths differ");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
      }
      if (bias_) {
        if (bias_->data.size() != out.size()) shape_error(fn_, "bias length differs from input");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias_->data[i];
      }
      return Value(std::move(out));
    }
    case F::Conv2d:
      if (!args[0].is_matrix()) type_error(fn_, "expected a matrix image");
      return Value(conv2d_direct(args[0].mat(), *filters_));
    case F::Softmax: return Value(softmax(vec_arg(fn_, args[0])));
    case F::Sigmoid: return map_elements(args[0], Activation::Sigmoid);
    case F::Relu: return map_elements(args[0], Activation::Relu);
    case F::Distance: {
      const auto& a = vec_arg(fn_, args[0]);
      const auto& b = vec_arg(fn_, args[1]);
      if (a.size() != b.size()) shape_error(fn_, "operand lengths differ");
      double acc = 0.0;
      const bool l1 = attrs_.metric.value_or(DistanceMetric::L2) == DistanceMetric::L1;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double dlt = a[i] - b[i];
        acc += l1 ? std::abs(dlt) : dlt * dlt;
      }
      return Value(l1 ? acc : std::sqrt(acc));
    }
    case F::CosineSim: {
      const auto& a = vec_arg(fn_, args[0]);
      const auto& b = vec_arg(fn_, args[1]);
      if (a.size() != b.size()) shape_error(fn_, "operand lengths differ");
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
      }
      if (na == 0.0 || nb == 0.0) return Value(0.0);
      return Value(dot / (std::sqrt(na) * std::sqrt(nb)));
    }
    case F::Argmax: {
      const auto& v = vec_arg(fn_, args[0]);
      if (v.empty()) shape_error(fn_, "empty vector");
      return Value(static_cast<std::int64_t>(std::max_element(v.begin(), v.end()) - v.begin()));
    }
    case F::FusedDnn: {
      std::vector<double> h = vec_arg(fn_, args[0]);
      for (const auto& l : layers_) {
        if (static_cast<int>(h.size()) != l.w.rows()) shape_error(fn_, "layer input length mismatch");
        h = l.mode == KernelMode::Sparse ? matmul_sparse(h, 1, l.w) : matmul_dense(h, 1, l.w);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += l.b->data[i];
        activate(l.act, h);
      }
      return Value(std::move(h));
    }
    case F::MinMaxScaler: {
      std::vector<double> out = vec_arg(fn_, args[0]);
      if (out.size() != scaler_->min.size()) shape_error(fn_, "scaler dimension differs from input");
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double span = scaler_->max[i] - scaler_->min[i];
        out[i] = span == 0.0 ? 0.0 : (out[i] - scaler_->min[i]) / span;
      }
      return Value(std::move(out));
    }
    case F::OneHotEncoder: {
      std::vector<double> out(encoder_->categories.size(), 0.0);
      const std::string key = category_text(args[0]);
      auto it = std::find(encoder_->categories.begin(), encoder_->categories.end(), key);
      if (it != encoder_->categories.end()) out[it - encoder_->categories.begin()] = 1.0;
      return Value(std::move(out));
    }
    case F::KMeans: {
      const auto& x = vec_arg(fn_, args[0]);
      if (static_cast<int>(x.size()) != kmeans_->dim) shape_error(fn_, "centroid dimension differs from input");
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < kmeans_->k; ++c) {
        double dsq = 0.0;
        for (int i = 0; i < kmeans_->dim; ++i) {
          const double dlt = x[i] - kmeans_->centroids[static_cast<std::size_t>(c) * kmeans_->dim + i];
          dsq += dlt * dlt;
        }
        if (dsq < best_d) {
          best_d = dsq;
          best = c;
        }
      }
      return Value(static_cast<std::int64_t>(best));
    }
    case F::NaiveBayes: {
      if (!args[0].is_string()) type_error(fn_, "expected a string");
      std::array<double, 2> score = nb_->log_prior;
      for (const auto& tok : tokenize(args[0].as_string())) {
        auto it = nb_->log_likelihood.find(tok);
        for (int c = 0; c < 2; ++c) score[c] += it == nb_->log_likelihood.end() ? nb_->unknown_log_prob : it->second[c];
      }
      return Value(static_cast<std::int64_t>(score[1] > score[0] ? 1 : 0));
    }
    case F::Llm: return Value(llm_mock(args, llm_seed_));
    case F::DecisionTree: {
      const auto& x = vec_arg(fn_, args[0]);
      if (n == 2) {
        const auto id = args[1].as_int();
        if (id < 0 || id >= static_cast<std::int64_t>(trees_->trees.size())) shape_error(fn_, "tree_id out of range");
        return Value(trees_->trees[id].predict(x));
      }
      if (trees_->trees.size() != 1) shape_error(fn_, "tree_spec holds several trees; pass a tree_id");
      return Value(trees_->trees.front().predict(x));
    }
    case F::DecisionForest: return Value(trees_->predict(vec_arg(fn_, args[0])));
  }
  fail(ErrorCode::Internal, "unhandled ML function");
}

Value eval_ml(MLFunctionId fn, std::span<const Value> args, const MLAttrs& attrs, const ModelStore& models,
              std::uint64_t llm_seed) {
  return BoundMLCall(fn, attrs, models, llm_seed)(args);
}

}  // namespace optbench
