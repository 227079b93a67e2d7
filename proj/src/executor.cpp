#include "optbench/executor.hpp"

#include <algorithm>
#include <charconv>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <thread>
#include <unordered_map>

#include "optbench/ml_kernels.hpp"

namespace optbench {

namespace {

struct Batch {
  std::vector<std::vector<Value>> cols;
  std::size_t rows = 0;

  explicit Batch(std::size_t ncols = 0) : cols(ncols) {}
  void append_row_from(const Batch& src, std::size_t r) {
    for (std::size_t c = 0; c < cols.size(); ++c) cols[c].push_back(src.cols[c][r]);
    ++rows;
  }
};

/// A row of one batch, or the concatenation of a left and a right row (joins).
struct RowRef {
  const Batch* left = nullptr;
  std::size_t lrow = 0;
  const Batch* right = nullptr;
  std::size_t rrow = 0;
  std::size_t split = static_cast<std::size_t>(-1);
  std::int64_t row_id = 0;

  const Value& get(std::size_t c) const { return c < split ? left->cols[c][lrow] : right->cols[c - split][rrow]; }
};

struct EvalCtx {
  std::atomic<std::uint64_t>* ml_invocations;
};

/// Numeric value of a scalar cell; strings must hold a number in full.
double cast_double(const Value& v) {
  if (!v.is_string()) return v.as_double();
  const std::string& s = v.as_string();
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) fail(ErrorCode::TypeError, "cannot cast '" + s + "' to a number");
  return out;
}

enum class FuncId { Concat, Element, Flatten, Im2col, FoldMaps, RowId, ToDouble, ToInt };

struct BoundExpr {
  enum class K { Column, Literal, Arith, Compare, Logical, ML, Func } k = K::Literal;
  std::size_t column = 0;
  Value literal;
  int op = 0;
  FuncId fn = FuncId::Concat;
  int p1 = 0, p2 = 0;
  std::vector<BoundExpr> args;
  std::shared_ptr<const BoundMLCall> ml;
};

int literal_param(const Expr& e) {
  auto* l = e.as<Literal>();
  if (!l || !l->value.is_int()) fail(ErrorCode::TypeMismatch, "expected an integer literal: " + e.to_string());
  return static_cast<int>(l->value.as_int());
}

BoundExpr bind(const Expr& e, const Schema& in, const ModelStore& models, std::uint64_t seed) {
  BoundExpr b;
  for (const auto& a : e.args()) b.args.push_back(bind(*a, in, models, seed));
  std::visit(
      [&](const auto& k) {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, ColumnRef>) {
          b.k = BoundExpr::K::Column;
          b.column = in.index_of(k.name);
        } else if constexpr (std::is_same_v<T, Literal>) {
          b.k = BoundExpr::K::Literal;
          b.literal = k.value;
        } else if constexpr (std::is_same_v<T, Arith>) {
          b.k = BoundExpr::K::Arith;
          b.op = static_cast<int>(k.op);
        } else if constexpr (std::is_same_v<T, Compare>) {
          b.k = BoundExpr::K::Compare;
          b.op = static_cast<int>(k.op);
        } else if constexpr (std::is_same_v<T, Logical>) {
          b.k = BoundExpr::K::Logical;
          b.op = static_cast<int>(k.op);
        } else if constexpr (std::is_same_v<T, MLCall>) {
          b.k = BoundExpr::K::ML;
          b.ml = std::make_shared<const BoundMLCall>(k.fn, k.attrs, models, seed);
        } else {
          b.k = BoundExpr::K::Func;
          static const std::pair<std::string_view, FuncId> names[] = {
              {"concat", FuncId::Concat},     {"element", FuncId::Element}, {"flatten", FuncId::Flatten},
              {"im2col", FuncId::Im2col},     {"fold_maps", FuncId::FoldMaps}, {"row_id", FuncId::RowId},
              {"to_double", FuncId::ToDouble}, {"to_int", FuncId::ToInt}};
          bool found = false;
          for (const auto& [n, id] : names)
            if (n == k.name) {
              b.fn = id;
              found = true;
            }
          if (!found) fail(ErrorCode::ValidationError, "unknown function '" + k.name + "'");
          if (b.fn == FuncId::Im2col || b.fn == FuncId::FoldMaps) {
            b.p1 = literal_param(*e.arg(1));
            b.p2 = literal_param(*e.arg(2));
          }
        }
      },
      e.kind());
  return b;
}

int compare_values(const Value& a, const Value& b) {
  if (a.is_numeric() && b.is_numeric()) {
    if (a.is_int() && b.is_int()) return a.as_int() < b.as_int() ? -1 : (a.as_int() > b.as_int() ? 1 : 0);
    const double x = a.as_double(), y = b.as_double();
    return x < y ? -1 : (x > y ? 1 : 0);
  }
  if (a.is_string() && b.is_string()) return a.as_string().compare(b.as_string()) < 0 ? -1 : (a.as_string() == b.as_string() ? 0 : 1);
  if (a.is_bool() && b.is_bool()) return static_cast<int>(a.as_bool()) - static_cast<int>(b.as_bool());
  if (a.is_vector() && b.is_vector()) {
    const auto& x = a.vec();
    const auto& y = b.vec();
    if (x < y) return -1;
    return x == y ? 0 : 1;
  }
  fail(ErrorCode::TypeError, "incomparable values " + a.to_string() + " and " + b.to_string());
}

Value eval_arith(int op, const Value& a, const Value& b) {
  const auto aop = static_cast<ArithOp>(op);
  if (a.is_int() && b.is_int() && aop != ArithOp::Div) {
    const auto x = a.as_int(), y = b.as_int();
    switch (aop) {
      case ArithOp::Add: return Value(x + y);
      case ArithOp::Sub: return Value(x - y);
      default: return Value(x * y);
    }
  }
  auto scalar = [&](double x, double y) {
    switch (aop) {
      case ArithOp::Add: return x + y;
      case ArithOp::Sub: return x - y;
      case ArithOp::Mul: return x * y;
      case ArithOp::Div: return x / y;
    }
    return 0.0;
  };
  if (!a.is_vector() && !b.is_vector()) return Value(scalar(a.as_double(), b.as_double()));
  if (a.is_vector() && b.is_vector()) {
    const auto& x = a.vec();
    const auto& y = b.vec();
    if (x.size() != y.size()) fail(ErrorCode::ShapeMismatch, "vector length mismatch in arithmetic");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = scalar(x[i], y[i]);
    return Value(std::move(out));
  }
  if (a.is_vector()) {
    const double y = b.as_double();
    std::vector<double> out = a.vec();
    for (auto& v : out) v = scalar(v, y);
    return Value(std::move(out));
  }
  const double x = a.as_double();
  std::vector<double> out = b.vec();
  for (auto& v : out) v = scalar(x, v);
  return Value(std::move(out));
}

bool eval_compare(int op, const Value& a, const Value& b) {
  const int c = compare_values(a, b);
  switch (static_cast<CompareOp>(op)) {
    case CompareOp::Eq: return c == 0;
    case CompareOp::Ne: return c != 0;
    case CompareOp::Lt: return c < 0;
    case CompareOp::Le: return c <= 0;
    case CompareOp::Gt: return c > 0;
    case CompareOp::Ge: return c >= 0;
  }
  return false;
}

Value eval(const BoundExpr& b, const RowRef& row, EvalCtx& ctx);

Value eval_func(const BoundExpr& b, const RowRef& row, EvalCtx& ctx) {
  switch (b.fn) {
    case FuncId::Concat: {
      std::vector<double> out;
      for (const auto& a : b.args) {
        const Value v = eval(a, row, ctx);
        if (v.is_vector()) {
          out.insert(out.end(), v.vec().begin(), v.vec().end());
        } else {
          out.push_back(v.as_double());
        }
      }
      return Value(std::move(out));
    }
    case FuncId::Element: {
      const Value v = eval(b.args[0], row, ctx);
      const auto i = eval(b.args[1], row, ctx).as_int();
      if (i < 0 || i >= static_cast<std::int64_t>(v.vec().size())) fail(ErrorCode::ShapeMismatch, "element index out of range");
      return Value(v.vec()[static_cast<std::size_t>(i)]);
    }
    case FuncId::Flatten: {
      const Value v = eval(b.args[0], row, ctx);
      if (v.is_vector()) return v;
      return Value(v.mat().data);
    }
    case FuncId::Im2col: return Value(im2col(eval(b.args[0], row, ctx).mat(), b.p1, b.p2));
    case FuncId::FoldMaps: return Value(fold_maps(eval(b.args[0], row, ctx).mat(), b.p1, b.p2));
    case FuncId::RowId: return Value(row.row_id);
    case FuncId::ToDouble: return Value(cast_double(eval(b.args[0], row, ctx)));
    case FuncId::ToInt: return Value(static_cast<std::int64_t>(cast_double(eval(b.args[0], row, ctx))));
  }
  return {};
}

Value eval(const BoundExpr& b, const RowRef& row, EvalCtx& ctx) {
  switch (b.k) {
    case BoundExpr::K::Column: return row.get(b.column);
    case BoundExpr::K::Literal: return b.literal;
    case BoundExpr::K::Arith: return eval_arith(b.op, eval(b.args[0], row, ctx), eval(b.args[1], row, ctx));
    case BoundExpr::K::Compare: return Value(eval_compare(b.op, eval(b.args[0], row, ctx), eval(b.args[1], row, ctx)));
    case BoundExpr::K::Logical:
      switch (static_cast<LogicalOp>(b.op)) {
        case LogicalOp::And:
          for (const auto& a : b.args)
            if (!eval(a, row, ctx).as_bool()) return Value(false);
          return Value(true);
        case LogicalOp::Or:
          for (const auto& a : b.args)
            if (eval(a, row, ctx).as_bool()) return Value(true);
          return Value(false);
        case LogicalOp::Not: return Value(!eval(b.args[0], row, ctx).as_bool());
      }
      return Value(false);
    case BoundExpr::K::ML: {
      std::vector<Value> args;
      args.reserve(b.args.size());
      for (const auto& a : b.args) args.push_back(eval(a, row, ctx));
      ctx.ml_invocations->fetch_add(1, std::memory_order_relaxed);
      return (*b.ml)(args);
    }
    case BoundExpr::K::Func: return eval_func(b, row, ctx);
  }
  return {};
}

struct ExecCtx {
  const Catalog& catalog;
  const ModelStore& models;
  const ExecConfig& config;
  std::atomic<std::uint64_t> ml_invocations{0};
  std::vector<OperatorStats> stats;
};

/// Runs fn(begin, end) over [0, n), split across threads when allowed.
template <typename Fn>
void parallel_rows(std::size_t n, const ExecConfig& cfg, Fn&& fn) {
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = cfg.deterministic || n < 256 ? 1 : std::min<std::size_t>(hw, 8);
  if (workers == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&, w, b, e] {
      try {
        fn(b, e);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

class Operator {
 public:
  explicit Operator(std::size_t stats_index, ExecCtx& ctx) : idx_(stats_index), ctx_(ctx) {}
  virtual ~Operator() = default;
  /// Produces the next non-empty batch; false at end of stream.
  bool next(Batch& out) {
    if (!produce(out)) return false;
    ctx_.stats[idx_].rows_out += out.rows;
    return true;
  }

 protected:
  virtual bool produce(Batch& out) = 0;
  bool pull(Operator& child, Batch& b) {
    if (!child.next(b)) return false;
    ctx_.stats[idx_].rows_in += b.rows;
    return true;
  }
  std::size_t idx_;
  ExecCtx& ctx_;
};

using OpPtr = std::unique_ptr<Operator>;

class ScanExec final : public Operator {
 public:
  ScanExec(std::size_t i, ExecCtx& ctx, TablePtr t) : Operator(i, ctx), table_(std::move(t)) {}

 protected:
  bool produce(Batch& out) override {
    const std::size_t n = table_->rows();
    if (pos_ >= n) return false;
    const std::size_t end = std::min(n, pos_ + ctx_.config.batch_size);
    out = Batch(table_->columns.size());
    for (std::size_t c = 0; c < table_->columns.size(); ++c)
      out.cols[c].assign(table_->columns[c].begin() + static_cast<std::ptrdiff_t>(pos_),
                         table_->columns[c].begin() + static_cast<std::ptrdiff_t>(end));
    out.rows = end - pos_;
    ctx_.stats[idx_].rows_in += out.rows;
    pos_ = end;
    return true;
  }

 private:
  TablePtr table_;
  std::size_t pos_ = 0;
};

class FilterExec final : public Operator {
 public:
  FilterExec(std::size_t i, ExecCtx& ctx, OpPtr child, BoundExpr pred)
      : Operator(i, ctx), child_(std::move(child)), pred_(std::move(pred)) {}

 protected:
  bool produce(Batch& out) override {
    Batch in;
    while (pull(*child_, in)) {
      std::vector<char> keep(in.rows, 0);
      parallel_rows(in.rows, ctx_.config, [&](std::size_t b, std::size_t e) {
        EvalCtx ec{&ctx_.ml_invocations};
        for (std::size_t r = b; r < e; ++r) {
          RowRef row{&in, r};
          keep[r] = eval(pred_, row, ec).as_bool() ? 1 : 0;
        }
      });
      out = Batch(in.cols.size());
      for (std::size_t r = 0; r < in.rows; ++r)
        if (keep[r]) out.append_row_from(in, r);
      if (out.rows > 0) return true;
    }
    return false;
  }

 private:
  OpPtr child_;
  BoundExpr pred_;
};

class ProjectExec final : public Operator {
 public:
  ProjectExec(std::size_t i, ExecCtx& ctx, OpPtr child, std::vector<BoundExpr> items)
      : Operator(i, ctx), child_(std::move(child)), items_(std::move(items)) {}

 protected:
  bool produce(Batch& in_out) override {
    Batch in;
    if (!pull(*child_, in)) return false;
    Batch out(items_.size());
    for (auto& c : out.cols) c.resize(in.rows);
    parallel_rows(in.rows, ctx_.config, [&](std::size_t b, std::size_t e) {
      EvalCtx ec{&ctx_.ml_invocations};
      for (std::size_t r = b; r < e; ++r) {
        RowRef row{&in, r};
        row.row_id = offset_ + static_cast<std::int64_t>(r);
        for (std::size_t i = 0; i < items_.size(); ++i) out.cols[i][r] = eval(items_[i], row, ec);
      }
    });
    out.rows = in.rows;
    offset_ += static_cast<std::int64_t>(in.rows);
    in_out = std::move(out);
    return true;
  }

 private:
  OpPtr child_;
  std::vector<BoundExpr> items_;
  std::int64_t offset_ = 0;
};

struct KeyHash {
  std::size_t operator()(const std::vector<Value>& k) const {
    std::uint64_t h = 0x51ed27;
    for (const auto& v : k) h = hash_combine(h, v.hash());
    return static_cast<std::size_t>(h);
  }
};

class JoinExec final : public Operator {
 public:
  JoinExec(std::size_t i, ExecCtx& ctx, OpPtr left, OpPtr right, const JoinOp& op, const Schema& ls, const Schema& rs)
      : Operator(i, ctx), left_(std::move(left)), right_(std::move(right)), split_(ls.size()), right_width_(rs.size()) {
    if (op.type == JoinType::Cross) return;
    const Schema both = ls.concat(rs);
    std::vector<ExprPtr> residual;
    for (const auto& c : conjuncts(op.condition)) {
      auto* cmp = c->as<Compare>();
      if (cmp && cmp->op == CompareOp::Eq) {
        const auto l = free_columns(*c->arg(0)), r = free_columns(*c->arg(1));
        auto within = [](const std::vector<std::string>& cols, const Schema& s) {
          return !cols.empty() && std::all_of(cols.begin(), cols.end(), [&](const auto& n) { return s.contains(n); });
        };
        const ExprPtr* lk = nullptr;
        const ExprPtr* rk = nullptr;
        if (within(l, ls) && within(r, rs)) {
          lk = &c->arg(0);
          rk = &c->arg(1);
        } else if (within(r, ls) && within(l, rs)) {
          lk = &c->arg(1);
          rk = &c->arg(0);
        }
        if (lk) {
          const DType lt = type_of(**lk, ls), rt = type_of(**rk, rs);
          coerce_.push_back(lt != rt && lt.is_numeric_scalar() && rt.is_numeric_scalar());
          left_keys_.push_back(bind(**lk, ls, ctx.models, ctx.config.seed));
          right_keys_.push_back(bind(**rk, rs, ctx.models, ctx.config.seed));
          continue;
        }
      }
      residual.push_back(c);
    }
    if (!residual.empty()) residual_ = bind(*conj(residual), both, ctx.models, ctx.config.seed);
  }

 protected:
  bool produce(Batch& out) override {
    if (!built_) build();
    out = Batch(split_ + right_width_);
    EvalCtx ec{&ctx_.ml_invocations};
    while (out.rows < ctx_.config.batch_size) {
      if (li_ >= lbatch_.rows) {
        if (!pull(*left_, lbatch_)) break;
        li_ = 0;
        start_left_row(ec);
      }
      while (ci_ < candidates_.size() && out.rows < ctx_.config.batch_size) {
        const std::size_t rr = candidates_[ci_++];
        if (residual_) {
          RowRef row{&lbatch_, li_, &rbatch_, rr, split_};
          if (!eval(*residual_, row, ec).as_bool()) continue;
        }
        for (std::size_t c = 0; c < split_; ++c) out.cols[c].push_back(lbatch_.cols[c][li_]);
        for (std::size_t c = 0; c < right_width_; ++c) out.cols[split_ + c].push_back(rbatch_.cols[c][rr]);
        ++out.rows;
      }
      if (ci_ >= candidates_.size()) {
        ++li_;
        if (li_ < lbatch_.rows) start_left_row(ec);
      }
    }
    return out.rows > 0;
  }

 private:
  std::vector<Value> key_of(const std::vector<BoundExpr>& keys, const Batch& b, std::size_t r, EvalCtx& ec) const {
    std::vector<Value> k;
    RowRef row{&b, r};
    for (std::size_t i = 0; i < keys.size(); ++i) {
      Value v = eval(keys[i], row, ec);
      k.push_back(coerce_[i] ? Value(v.as_double()) : std::move(v));
    }
    return k;
  }

  void build() {
    built_ = true;
    rbatch_ = Batch(right_width_);
    Batch b;
    while (pull(*right_, b))
      for (std::size_t r = 0; r < b.rows; ++r) rbatch_.append_row_from(b, r);
    if (left_keys_.empty()) return;
    EvalCtx ec{&ctx_.ml_invocations};
    for (std::size_t r = 0; r < rbatch_.rows; ++r) table_[key_of(right_keys_, rbatch_, r, ec)].push_back(r);
  }

  void start_left_row(EvalCtx& ec) {
    ci_ = 0;
    candidates_.clear();
    if (left_keys_.empty()) {
      candidates_.resize(rbatch_.rows);
      std::iota(candidates_.begin(), candidates_.end(), std::size_t{0});
      return;
    }
    auto it = table_.find(key_of(left_keys_, lbatch_, li_, ec));
    if (it != table_.end()) candidates_ = it->second;
  }

  OpPtr left_, right_;
  std::size_t split_, right_width_;
  std::vector<BoundExpr> left_keys_, right_keys_;
  std::vector<bool> coerce_;
  std::optional<BoundExpr> residual_;
  bool built_ = false;
  Batch rbatch_, lbatch_;
  std::unordered_map<std::vector<Value>, std::vector<std::size_t>, KeyHash> table_;
  std::size_t li_ = 0, ci_ = 0;
  std::vector<std::size_t> candidates_;
};

struct Accumulator {
  AggFn fn;
  DType out;
  std::int64_t count = 0;
  std::int64_t isum = 0;
  double dsum = 0.0;
  std::vector<double> vsum;
  std::optional<Value> best;
  std::vector<std::pair<Value, std::int64_t>> votes;

  void add(const Value* v) {
    ++count;
    if (!v) return;
    switch (fn) {
      case AggFn::Sum:
      case AggFn::Avg:
        if (v->is_vector()) {
          const auto& x = v->vec();
          if (vsum.empty()) vsum.assign(x.size(), 0.0);
          for (std::size_t i = 0; i < x.size(); ++i) vsum[i] += x[i];
        } else if (fn == AggFn::Sum && out.kind == TypeKind::Int64) {
          isum += v->is_bool() ? static_cast<std::int64_t>(v->as_bool()) : v->as_int();
        } else {
          dsum += v->as_double();
        }
        break;
      case AggFn::Min:
        if (!best || compare_values(*v, *best) < 0) best = *v;
        break;
      case AggFn::Max:
        if (!best || compare_values(*v, *best) > 0) best = *v;
        break;
      case AggFn::MajorityVote: {
        auto it = std::find_if(votes.begin(), votes.end(), [&](const auto& p) { return p.first == *v; });
        if (it == votes.end()) votes.emplace_back(*v, 1);
        else ++it->second;
        break;
      }
      case AggFn::Count: break;
    }
  }

  Value zero() const {
    switch (out.kind) {
      case TypeKind::Int64: return Value(std::int64_t{0});
      case TypeKind::Float64: return Value(0.0);
      case TypeKind::String: return Value(std::string());
      case TypeKind::Bool: return Value(false);
      case TypeKind::Vector: return Value(std::vector<double>(static_cast<std::size_t>(out.cols), 0.0));
      case TypeKind::Matrix: break;
    }
    return {};
  }

  Value result() const {
    switch (fn) {
      case AggFn::Count: return Value(count);
      case AggFn::Sum:
        if (out.kind == TypeKind::Vector) return vsum.empty() ? zero() : Value(vsum);
        if (out.kind == TypeKind::Int64) return Value(isum);
        return Value(dsum);
      case AggFn::Avg: {
        if (count == 0) return zero();
        if (out.kind == TypeKind::Vector) {
          std::vector<double> v = vsum;
          for (auto& x : v) x /= static_cast<double>(count);
          return Value(std::move(v));
        }
        return Value(dsum / static_cast<double>(count));
      }
      case AggFn::Min:
      case AggFn::Max: return best ? *best : zero();
      case AggFn::MajorityVote: {
        if (votes.empty()) return zero();
        const auto* win = &votes.front();
        for (const auto& p : votes)
          if (p.second > win->second || (p.second == win->second && compare_values(p.first, win->first) > 0)) win = &p;
        return win->first;
      }
    }
    return {};
  }
};

class AggregateExec final : public Operator {
 public:
  AggregateExec(std::size_t i, ExecCtx& ctx, OpPtr child, const AggregateOp& op, const Schema& in, const Schema& out_schema)
      : Operator(i, ctx), child_(std::move(child)), out_schema_(out_schema) {
    for (const auto& k : op.keys) keys_.push_back(bind(*k.expr, in, ctx.models, ctx.config.seed));
    for (std::size_t a = 0; a < op.aggregates.size(); ++a) {
      const auto& item = op.aggregates[a];
      args_.push_back(item.arg ? std::optional<BoundExpr>(bind(*item.arg, in, ctx.models, ctx.config.seed)) : std::nullopt);
      templates_.push_back(Accumulator{item.fn, out_schema[op.keys.size() + a].dtype});
    }
  }

 protected:
  bool produce(Batch& out) override {
    if (!done_) consume();
    if (emitted_ >= group_keys_.size() && !(emitted_ == 0 && keys_.empty() && !empty_emitted_)) return false;
    out = Batch(out_schema_.size());
    if (keys_.empty() && group_keys_.empty()) {
      empty_emitted_ = true;
      for (std::size_t a = 0; a < templates_.size(); ++a) out.cols[a].push_back(templates_[a].result());
      out.rows = 1;
      return true;
    }
    const std::size_t end = std::min(group_keys_.size(), emitted_ + ctx_.config.batch_size);
    for (std::size_t g = emitted_; g < end; ++g) {
      for (std::size_t k = 0; k < keys_.size(); ++k) out.cols[k].push_back(group_keys_[g][k]);
      for (std::size_t a = 0; a < templates_.size(); ++a) out.cols[keys_.size() + a].push_back(accs_[g][a].result());
    }
    out.rows = end - emitted_;
    emitted_ = end;
    return true;
  }

 private:
  void consume() {
    done_ = true;
    EvalCtx ec{&ctx_.ml_invocations};
    Batch in;
    while (pull(*child_, in)) {
      for (std::size_t r = 0; r < in.rows; ++r) {
        RowRef row{&in, r};
        std::vector<Value> key;
        key.reserve(keys_.size());
        for (const auto& k : keys_) key.push_back(eval(k, row, ec));
        auto [it, inserted] = index_.try_emplace(key, group_keys_.size());
        if (inserted) {
          group_keys_.push_back(std::move(key));
          accs_.push_back(templates_);
        }
        auto& acc = accs_[it->second];
        for (std::size_t a = 0; a < args_.size(); ++a) {
          if (args_[a]) {
            const Value v = eval(*args_[a], row, ec);
            acc[a].add(&v);
          } else {
            acc[a].add(nullptr);
          }
        }
      }
    }
    if (keys_.empty() && !group_keys_.empty()) {
      // a global aggregate always yields exactly one row
      templates_ = accs_.front();
      group_keys_.clear();
      accs_.clear();
    }
  }

  OpPtr child_;
  Schema out_schema_;
  std::vector<BoundExpr> keys_;
  std::vector<std::optional<BoundExpr>> args_;
  std::vector<Accumulator> templates_;
  std::unordered_map<std::vector<Value>, std::size_t, KeyHash> index_;
  std::vector<std::vector<Value>> group_keys_;
  std::vector<std::vector<Accumulator>> accs_;
  bool done_ = false;
  bool empty_emitted_ = false;
  std::size_t emitted_ = 0;
};

class LimitExec final : public Operator {
 public:
  LimitExec(std::size_t i, ExecCtx& ctx, OpPtr child, std::int64_t n) : Operator(i, ctx), child_(std::move(child)), left_(n) {}

 protected:
  bool produce(Batch& out) override {
    if (left_ <= 0) return false;
    Batch in;
    if (!pull(*child_, in)) return false;
    const auto take = std::min<std::int64_t>(left_, static_cast<std::int64_t>(in.rows));
    out = Batch(in.cols.size());
    for (std::int64_t r = 0; r < take; ++r) out.append_row_from(in, static_cast<std::size_t>(r));
    left_ -= take;
    return out.rows > 0;
  }

 private:
  OpPtr child_;
  std::int64_t left_;
};

/// Reservoir sampling (Algorithm R); survivors are emitted in input order.
class SampleExec final : public Operator {
 public:
  SampleExec(std::size_t i, ExecCtx& ctx, OpPtr child, std::int64_t n, std::uint64_t seed, std::size_t width)
      : Operator(i, ctx), child_(std::move(child)), n_(static_cast<std::size_t>(n)), rng_(seed), width_(width) {}

 protected:
  bool produce(Batch& out) override {
    if (!done_) consume();
    if (emitted_ >= order_.size()) return false;
    const std::size_t end = std::min(order_.size(), emitted_ + ctx_.config.batch_size);
    out = Batch(width_);
    for (std::size_t i = emitted_; i < end; ++i) {
      const auto& row = reservoir_[order_[i]].second;
      for (std::size_t c = 0; c < width_; ++c) out.cols[c].push_back(row[c]);
      ++out.rows;
    }
    emitted_ = end;
    return true;
  }

 private:
  void consume() {
    done_ = true;
    Batch in;
    std::uint64_t seen = 0;
    while (pull(*child_, in)) {
      for (std::size_t r = 0; r < in.rows; ++r, ++seen) {
        std::size_t slot;
        if (seen < n_) {
          slot = reservoir_.size();
          reservoir_.emplace_back();
        } else {
          const std::uint64_t j = rng_() % (seen + 1);
          if (j >= n_) continue;
          slot = static_cast<std::size_t>(j);
        }
        auto& [index, row] = reservoir_[slot];
        index = seen;
        row.clear();
        for (std::size_t c = 0; c < width_; ++c) row.push_back(in.cols[c][r]);
      }
    }
    order_.resize(reservoir_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return reservoir_[a].first < reservoir_[b].first; });
  }

  OpPtr child_;
  std::size_t n_;
  std::mt19937_64 rng_;
  std::size_t width_;
  bool done_ = false;
  std::vector<std::pair<std::uint64_t, std::vector<Value>>> reservoir_;
  std::vector<std::size_t> order_;
  std::size_t emitted_ = 0;
};

OpPtr build(const PlanPtr& node, const std::string& path, ExecCtx& ctx) {
  const std::size_t idx = ctx.stats.size();
  ctx.stats.push_back({path, node->kind(), 0, 0});
  std::vector<OpPtr> kids;
  for (std::size_t i = 0; i < node->children().size(); ++i) kids.push_back(build(node->child(i), child_path(path, i), ctx));
  const Schema in = node->input_schema();
  const auto seed = ctx.config.seed;
  return std::visit(
      [&](const auto& o) -> OpPtr {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, ScanOp>) {
          TablePtr t = ctx.catalog.get_ptr(o.table);
          if (!(t->schema == o.schema))
            fail(ErrorCode::DivergentSchema, "table '" + o.table + "' is " + t->schema.to_string() + ", plan expects " +
                                                 o.schema.to_string());
          return std::make_unique<ScanExec>(idx, ctx, std::move(t));
        } else if constexpr (std::is_same_v<T, FilterOp>) {
          return std::make_unique<FilterExec>(idx, ctx, std::move(kids[0]), bind(*o.predicate, in, ctx.models, seed));
        } else if constexpr (std::is_same_v<T, ProjectOp>) {
          std::vector<BoundExpr> items;
          for (const auto& it : o.items) items.push_back(bind(*it.expr, in, ctx.models, seed));
          return std::make_unique<ProjectExec>(idx, ctx, std::move(kids[0]), std::move(items));
        } else if constexpr (std::is_same_v<T, JoinOp>) {
          return std::make_unique<JoinExec>(idx, ctx, std::move(kids[0]), std::move(kids[1]), o, node->child(0)->schema(),
                                            node->child(1)->schema());
        } else if constexpr (std::is_same_v<T, AggregateOp>) {
          return std::make_unique<AggregateExec>(idx, ctx, std::move(kids[0]), o, in, node->schema());
        } else if constexpr (std::is_same_v<T, LimitOp>) {
          return std::make_unique<LimitExec>(idx, ctx, std::move(kids[0]), o.n);
        } else {
          return std::make_unique<SampleExec>(idx, ctx, std::move(kids[0]), o.n, o.seed, in.size());
        }
      },
      node->op());
}

}  // namespace

ResultSet execute(const PlanPtr& plan, const Catalog& catalog, const ModelStore& models, const ExecConfig& config) {
  if (config.batch_size == 0) fail(ErrorCode::ValidationError, "batch size must be positive");
  const auto t0 = std::chrono::steady_clock::now();
  ExecCtx ctx{catalog, models, config};
  ctx.stats.reserve(node_count(*plan));
  OpPtr root = build(plan, "0", ctx);
  ResultSet rs;
  rs.schema = plan->schema();
  rs.columns.resize(rs.schema.size());
  Batch b;
  while (root->next(b)) {
    for (std::size_t c = 0; c < b.cols.size(); ++c)
      rs.columns[c].insert(rs.columns[c].end(), std::make_move_iterator(b.cols[c].begin()),
                           std::make_move_iterator(b.cols[c].end()));
    rs.row_count += b.rows;
  }
  rs.stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  rs.stats.ml_invocations = ctx.ml_invocations.load();
  rs.stats.operators = std::move(ctx.stats);
  return rs;
}

namespace {

std::string round6(double x) {
  if (std::abs(x) < 1e-9) return "0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

std::string canonical_cell(const Value& v) {
  switch (v.kind()) {
    case TypeKind::Int64: return "i" + std::to_string(v.as_int());
    case TypeKind::Float64: return "d" + round6(v.as_double());
    case TypeKind::String: {
      std::string s = "s";
      for (char c : v.as_string()) {
        if (c == '|' || c == '\\') s += '\\';
        s += c;
      }
      return s;
    }
    case TypeKind::Bool: return v.as_bool() ? "btrue" : "bfalse";
    case TypeKind::Vector: {
      std::string s = "v[";
      for (double x : v.vec()) s += round6(x) + ",";
      return s + "]";
    }
    case TypeKind::Matrix: {
      const auto& m = v.mat();
      std::string s = "m" + std::to_string(m.rows) + "x" + std::to_string(m.cols) + "[";
      for (double x : m.data) s += round6(x) + ",";
      return s + "]";
    }
  }
  return {};
}

bool cells_close(const Value& a, const Value& b, double tol) {
  auto close = [tol](double x, double y) { return std::abs(x - y) <= tol * std::max(std::abs(x), std::abs(y)) + 1e-12; };
  if (a.is_numeric() && b.is_numeric()) {
    if (a.is_int() && b.is_int()) return a.as_int() == b.as_int();
    return close(a.as_double(), b.as_double());
  }
  if (a.is_vector() && b.is_vector()) {
    if (a.vec().size() != b.vec().size()) return false;
    for (std::size_t i = 0; i < a.vec().size(); ++i)
      if (!close(a.vec()[i], b.vec()[i])) return false;
    return true;
  }
  if (a.is_matrix() && b.is_matrix()) {
    const auto& x = a.mat();
    const auto& y = b.mat();
    if (x.rows != y.rows || x.cols != y.cols) return false;
    for (std::size_t i = 0; i < x.data.size(); ++i)
      if (!close(x.data[i], y.data[i])) return false;
    return true;
  }
  return a == b;
}

std::vector<std::size_t> sorted_rows(const ResultSet& r, const std::vector<std::size_t>& col_order,
                                     const std::vector<std::size_t>& key_cols, bool rounded) {
  std::vector<std::size_t> idx(r.row_count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (rounded) {
    std::vector<std::string> keys(r.row_count);
    for (std::size_t i = 0; i < r.row_count; ++i) {
      for (auto c : key_cols) keys[i] += canonical_cell(r.at(i, c)) + "|";
      keys[i] += "#";
      for (auto c : col_order) keys[i] += canonical_cell(r.at(i, c)) + "|";
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  } else {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      for (auto c : col_order) {
        const Value& x = r.at(a, c);
        const Value& y = r.at(b, c);
        if (x.is_matrix()) continue;
        const int cmp = compare_values(x, y);
        if (cmp != 0) return cmp < 0;
      }
      return false;
    });
  }
  return idx;
}

}  // namespace

EquivalenceReport compare_results(const ResultSet& a, const ResultSet& b, const std::vector<std::string>& key_columns,
                                  double tol) {
  if (a.schema.size() != b.schema.size())
    fail(ErrorCode::SchemaMismatch, "column counts differ: " + a.schema.to_string() + " vs " + b.schema.to_string());
  std::vector<std::size_t> a_cols, b_cols;
  for (std::size_t c = 0; c < a.schema.size(); ++c) {
    const auto j = b.schema.find(a.schema[c].name);
    if (!j || !(b.schema[*j].dtype == a.schema[c].dtype))
      fail(ErrorCode::SchemaMismatch, "column '" + a.schema[c].name + "' missing or typed differently");
    a_cols.push_back(c);
    b_cols.push_back(*j);
  }
  std::vector<std::size_t> a_keys, b_keys;
  for (const auto& k : key_columns) {
    a_keys.push_back(a.schema.index_of(k));
    b_keys.push_back(b.schema.index_of(k));
  }
  EquivalenceReport rep;
  if (a.row_count != b.row_count) {
    rep.equivalent = false;
    rep.message = "row counts differ: " + std::to_string(a.row_count) + " vs " + std::to_string(b.row_count);
    return rep;
  }
  auto first_divergence = [&](bool rounded) -> std::optional<std::pair<std::size_t, std::size_t>> {
    const auto ia = sorted_rows(a, a_cols, a_keys, rounded);
    const auto ib = sorted_rows(b, b_cols, b_keys, rounded);
    for (std::size_t i = 0; i < ia.size(); ++i)
      for (std::size_t c = 0; c < a_cols.size(); ++c)
        if (!cells_close(a.at(ia[i], a_cols[c]), b.at(ib[i], b_cols[c]), tol)) return std::pair{ia[i], c};
    return std::nullopt;
  };
  const auto primary = first_divergence(true);
  if (!primary) return rep;
  if (!first_divergence(false)) return rep;
  rep.equivalent = false;
  rep.row = primary->first;
  for (auto k : a_keys) rep.key += canonical_cell(a.at(primary->first, k)) + "|";
  rep.message = "row " + std::to_string(primary->first) + " differs in column '" + a.schema[a_cols[primary->second]].name +
                "': " + a.at(primary->first, a_cols[primary->second]).to_string();
  return rep;
}

std::string result_digest(const ResultSet& r) {
  std::vector<std::size_t> order(r.schema.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return r.schema[x].name < r.schema[y].name; });
  std::vector<std::string> rows(r.row_count);
  for (std::size_t i = 0; i < r.row_count; ++i)
    for (auto c : order) rows[i] += canonical_cell(r.at(i, c)) + "|";
  std::sort(rows.begin(), rows.end());
  std::uint64_t h = stable_hash("optbench-result");
  for (auto c : order) h = hash_combine(h, stable_hash(r.schema[c].name + ":" + r.schema[c].dtype.to_string()));
  for (const auto& row : rows) h = hash_combine(h, stable_hash(row));
  return hex64(hash_combine(h, r.row_count));
}

nlohmann::json exec_stats_to_json(const ExecStats& s) {
  nlohmann::json ops = nlohmann::json::array();
  for (const auto& o : s.operators)
    ops.push_back({{"path", o.path}, {"kind", std::string(node_kind_name(o.kind))}, {"rows_in", o.rows_in}, {"rows_out", o.rows_out}});
  return {{"operators", std::move(ops)}, {"ml_invocations", s.ml_invocations}, {"wall_ms", s.wall_ms}};
}

}  // namespace optbench
