// Expression-level actions that swap one ML kernel formulation for another.

#include <limits>

#include "action_util.hpp"

namespace optbench {

namespace {

class MatMulDense2Sparse final : public ActionTemplate<MatMulDense2Sparse> {
 public:
  using ActionTemplate::ActionTemplate;
  std::string_view template_id() const override { return "MatMulDense2Sparse"; }
  std::string_view summary() const override {
    return "Switch matrix multiplication to the sparse kernel when its input is sparse and large.";
  }

  ExprRewrite rewrite_expr(const ExprPtr& e, const PlanPtr& owner, RewriteContext& ctx) const override {
    if (!ctx.stats || owner->children().empty() || !contains_ml(*e)) return {false, e};
    if (ctx.stats->input_rows(owner) < param("min_rows")) return {false, e};
    bool modified = false;
    ExprPtr out = detail::transform_bottom_up(e, [&](const ExprPtr& orig, const ExprPtr& rebuilt) -> ExprPtr {
      const auto* c = orig->as<MLCall>();
      if (!c || c->fn != MLFunctionId::MatrixMultiply || c->attrs.mode() == KernelMode::Sparse) return nullptr;
      double nnz = 1.0;
      try {
        nnz = ctx.stats->sample_ml_stats(owner, orig).nnz_ratio;
      } catch (const Error& err) {
        if (err.code() == ErrorCode::EmptySample || err.code() == ErrorCode::NonNumericFeature) return nullptr;
        throw;
      }
      if (!(1.0 - nnz > param("sparsity_threshold"))) return nullptr;
      MLAttrs a = c->attrs;
      a.kernel_mode = KernelMode::Sparse;
      modified = true;
      return detail::ml_with_attrs(orig, std::move(a), rebuilt->args());
    });
    return {modified, out};
  }
};

struct Layer {
  LayerSpec spec;
  ExprPtr input;
};

/// act(mat_add<bias>(matmul<W>(x))) with an optional activation.
std::optional<Layer> parse_layer(const ExprPtr& e) {
  Activation act = Activation::Identity;
  ExprPtr add = e;
  if (const auto* c = e->as<MLCall>(); c && e->args().size() == 1) {
    if (c->fn == MLFunctionId::Relu) act = Activation::Relu;
    if (c->fn == MLFunctionId::Sigmoid) act = Activation::Sigmoid;
    if (c->fn == MLFunctionId::Softmax) act = Activation::Softmax;
    if (act != Activation::Identity) add = e->arg(0);
  }
  const auto* a = add->as<MLCall>();
  if (!a || a->fn != MLFunctionId::MatrixAddition || add->args().size() != 1 || !a->attrs.model_id) return std::nullopt;
  const ExprPtr& mm = add->arg(0);
  const auto* m = mm->as<MLCall>();
  if (!m || m->fn != MLFunctionId::MatrixMultiply || mm->args().size() != 1 || !m->attrs.model_id || !m->attrs.weight_shape ||
      m->attrs.weight_rows)
    return std::nullopt;
  const auto [in, out] = *m->attrs.weight_shape;
  if (a->attrs.bias_shape && *a->attrs.bias_shape != out) return std::nullopt;
  return Layer{{*m->attrs.model_id, *a->attrs.model_id, act, in, out, m->attrs.mode()}, mm->arg(0)};
}

/// Replaces affine layer chains whose length lies in [min_layers, max_layers]
/// (max 0 = unbounded) with one fused_dnn call. Chains are taken maximal from
/// the outermost layer; a chain of the wrong length is left whole.
template <bool TwoLayer>
class FuseNNChain final : public ActionTemplate<FuseNNChain<TwoLayer>> {
 public:
  using ActionTemplate<FuseNNChain<TwoLayer>>::ActionTemplate;
  using RewriteAction::param;
  std::string_view template_id() const override { return TwoLayer ? "Fuse2TorchNN" : "MultiLayerUDF2TorchNN"; }
  std::string_view summary() const override {
    return TwoLayer ? "Fuse a two-layer affine network UDF chain into one fused network operator."
                    : "Fuse a multi-layer affine network UDF chain into one fused network operator.";
  }

  ExprRewrite rewrite_expr(const ExprPtr& e, const PlanPtr& owner, RewriteContext&) const override {
    if (!contains_ml(*e)) return {false, e};
    bool modified = false;
    const Schema in = owner->input_schema();
    ExprPtr out = fuse(e, in, modified);
    return {modified, out};
  }

 private:
  ExprPtr fuse(const ExprPtr& e, const Schema& in, bool& modified) const {
    std::vector<Layer> chain;
    for (auto l = parse_layer(e); l; l = parse_layer(l->input)) chain.push_back(*l);
    if (chain.empty()) {
      std::vector<ExprPtr> args;
      bool changed = false;
      for (const auto& a : e->args()) {
        args.push_back(fuse(a, in, modified));
        changed = changed || args.back() != a;
      }
      return changed ? with_args(*e, std::move(args)) : e;
    }
    const ExprPtr& inner = chain.back().input;
    ExprPtr inner2 = fuse(inner, in, modified);
    const double n = static_cast<double>(chain.size());
    const double max_layers = param("max_layers");
    const bool fits = n >= param("min_layers") && (max_layers <= 0 || n <= max_layers);
    if (fits && type_of(*inner, in).kind == TypeKind::Vector) {
      MLAttrs a;
      for (auto it = chain.rbegin(); it != chain.rend(); ++it) a.layers.push_back(it->spec);
      modified = true;
      return ml(MLFunctionId::FusedDnn, {inner2}, std::move(a));
    }
    return inner2 == inner ? e : detail::replace_subexpr(e, *inner, inner2);
  }
};

/// conv2d(img) => fold_maps(matmul(im2col(img)), oh, ow) over the filter bank
/// viewed as an (fh*fw) x F matrix.
class ConvNN2MatMul final : public ActionTemplate<ConvNN2MatMul> {
 public:
  using ActionTemplate::ActionTemplate;
  std::string_view template_id() const override { return "ConvNN2MatMul"; }
  std::string_view summary() const override {
    return "Rewrite convolution as a matrix multiplication of the unfolded image and the stacked filters.";
  }

  ExprRewrite rewrite_expr(const ExprPtr& e, const PlanPtr& owner, RewriteContext&) const override {
    if (!contains_ml(*e)) return {false, e};
    bool modified = false;
    const Schema in = owner->input_schema();
    ExprPtr out = detail::transform_bottom_up(e, [&](const ExprPtr& orig, const ExprPtr& rebuilt) -> ExprPtr {
      const auto* c = orig->as<MLCall>();
      if (!c || c->fn != MLFunctionId::Conv2d || !c->attrs.filter_spec || !c->attrs.model_id) return nullptr;
      const DType img = type_of(*orig->arg(0), in);
      const auto& f = *c->attrs.filter_spec;
      if (img.kind != TypeKind::Matrix || img.rows < f.height || img.cols < f.width)
        fail(ErrorCode::UnsupportedConvConfig, "conv2d input must be a matrix at least as large as the filters");
      const int oh = img.rows - f.height + 1, ow = img.cols - f.width + 1;
      MLAttrs a;
      a.model_id = c->attrs.model_id;
      a.weight_shape = std::pair{f.height * f.width, f.count};
      ExprPtr unfolded = func("im2col", {rebuilt->arg(0), lit(Value(f.height)), lit(Value(f.width))});
      modified = true;
      return func("fold_maps", {ml(MLFunctionId::MatrixMultiply, {unfolded}, std::move(a)), lit(Value(oh)), lit(Value(ow))});
    });
    return {modified, out};
  }
};

}  // namespace

ActionPtr make_matmul_dense2sparse() {
  return std::make_shared<MatMulDense2Sparse>("MatMulDense2Sparse", ActionParams{{"sparsity_threshold", 0.7}, {"min_rows", 1e6}});
}
ActionPtr make_fuse2_torch_nn() {
  return std::make_shared<FuseNNChain<true>>("Fuse2TorchNN", ActionParams{{"min_layers", 2}, {"max_layers", 2}});
}
ActionPtr make_multilayer_udf2_torch_nn() {
  return std::make_shared<FuseNNChain<false>>("MultiLayerUDF2TorchNN", ActionParams{{"min_layers", 3}, {"max_layers", 0}});
}
ActionPtr make_conv2matmul() { return std::make_shared<ConvNN2MatMul>("ConvNN2MatMul", ActionParams{}); }

}  // namespace optbench
