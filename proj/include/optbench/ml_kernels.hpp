#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "optbench/expr.hpp"
#include "optbench/models.hpp"
#include "optbench/value.hpp"

namespace optbench {

/// Registered call signature of one ML function. max_args < 0 means variadic.
struct MLSignature {
  MLFunctionId fn;
  int min_args;
  int max_args;
  std::string_view arguments;
  std::string_view result;
};

const MLSignature& ml_signature(MLFunctionId fn);

/// Static output type of an ML call. Throws ArityMismatch, TypeMismatch or
/// ShapeMismatch when the arguments do not fit the signature and attrs.
DType ml_output_type(MLFunctionId fn, const MLAttrs& attrs, std::span<const DType> arg_types);

struct ShapeInfo {
  DType out_shape;
  double num_parameters = 0.0;
  double flops = 0.0;
  std::optional<int> forest_num_trees;
};

/// Shape, parameter count and per-row FLOPs of a call. `arg_types` may be empty
/// for functions whose cost is fully determined by attrs (matmul, fused_dnn, trees).
ShapeInfo get_shape(MLFunctionId fn, const MLAttrs& attrs, const ModelStore& models,
                    std::span<const DType> arg_types = {});

/// Compressed-row matrix, built on demand from dense inputs by the sparse kernel.
struct CsrMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_ptr;
  std::vector<int> col_idx;
  std::vector<double> values;

  static CsrMatrix from_dense(std::span<const double> data, int rows, int cols);
};

/// Row slice [row_begin, row_end) of a weight matrix, viewed without copying.
struct WeightView {
  const DenseMatrix* w = nullptr;
  int row_begin = 0;
  int row_end = 0;
  int rows() const { return row_end - row_begin; }
  int cols() const { return w->cols; }
};

/// x (m x k, row-major) times W (k x n). Dense and sparse kernels accumulate in
/// the same k-order so they agree up to the skipped zero terms.
std::vector<double> matmul_dense(std::span<const double> x, int m, const WeightView& w);
std::vector<double> matmul_sparse(std::span<const double> x, int m, const WeightView& w);

Matrix conv2d_direct(const Matrix& image, const FilterBank& filters);
/// im2col lowering: patches (P x fh*fw) times concatenated filters (fh*fw x F),
/// folded back to the direct layout (F*oh x ow).
Matrix conv2d_as_matmul_reference(const Matrix& image, const FilterBank& filters);
Matrix im2col(const Matrix& image, int fh, int fw);
Matrix fold_maps(const Matrix& patch_by_filter, int oh, int ow);
DenseMatrix filters_as_matrix(const FilterBank& filters);

std::vector<double> softmax(std::span<const double> v);
double sigmoid(double x);

/// Deterministic stand-in for an LLM: "0" or "1" from a digest of the prompt,
/// argument values and a global seed.
std::string llm_mock(std::span<const Value> args, std::uint64_t seed);

/// A call with its models resolved once, for repeated per-row evaluation.
class BoundMLCall {
 public:
  BoundMLCall(MLFunctionId fn, const MLAttrs& attrs, const ModelStore& models, std::uint64_t llm_seed = 0);

  Value operator()(std::span<const Value> args) const;
  MLFunctionId fn() const { return fn_; }

 private:
  struct Layer {
    WeightView w;
    const BiasVector* b = nullptr;
    Activation act = Activation::Identity;
    KernelMode mode = KernelMode::Dense;
  };

  MLFunctionId fn_;
  MLAttrs attrs_;
  std::uint64_t llm_seed_;
  std::shared_ptr<const DenseMatrix> owned_weights_;
  WeightView weights_;
  const BiasVector* bias_ = nullptr;
  const FilterBank* filters_ = nullptr;
  const KMeansModel* kmeans_ = nullptr;
  const NaiveBayesModel* nb_ = nullptr;
  const ScalerModel* scaler_ = nullptr;
  const EncoderModel* encoder_ = nullptr;
  std::shared_ptr<const TreeEnsemble> trees_;
  std::vector<Layer> layers_;
};

Value eval_ml(MLFunctionId fn, std::span<const Value> args, const MLAttrs& attrs, const ModelStore& models,
              std::uint64_t llm_seed = 0);

std::vector<std::string> tokenize(std::string_view text);

}  // namespace optbench
