#include "action_util.hpp"

#include <algorithm>

namespace optbench::detail {

std::string fresh_name(std::string_view base, std::uint64_t seed, const Schema& taken) {
  return fresh_name(base, seed, std::vector<const Schema*>{&taken});
}

std::string fresh_name(std::string_view base, std::uint64_t seed, const std::vector<const Schema*>& taken,
                       const std::vector<std::string>& reserved) {
  const std::string stem = std::string(base) + "_" + hex64(seed).substr(0, 8);
  auto is_taken = [&](const std::string& n) {
    if (std::find(reserved.begin(), reserved.end(), n) != reserved.end()) return true;
    return std::any_of(taken.begin(), taken.end(), [&](const Schema* s) { return s->contains(n); });
  };
  if (!is_taken(stem)) return stem;
  for (int i = 2;; ++i) {
    std::string candidate = stem + "_" + std::to_string(i);
    if (!is_taken(candidate)) return candidate;
  }
}

bool columns_within(const Expr& e, const Schema& s) {
  const auto cols = free_columns(e);
  return !cols.empty() && std::all_of(cols.begin(), cols.end(), [&](const auto& n) { return s.contains(n); });
}

ExprPtr transform_bottom_up(const ExprPtr& e, const std::function<ExprPtr(const ExprPtr&, const ExprPtr&)>& fn) {
  std::vector<ExprPtr> args;
  bool changed = false;
  for (const auto& a : e->args()) {
    args.push_back(transform_bottom_up(a, fn));
    changed = changed || args.back() != a;
  }
  ExprPtr rebuilt = changed ? with_args(*e, std::move(args)) : e;
  ExprPtr out = fn(e, rebuilt);
  return out ? out : rebuilt;
}

ExprPtr replace_subexpr(const ExprPtr& e, const Expr& target, const ExprPtr& replacement) {
  if (e->hash() == target.hash() && structurally_equal(*e, target)) return replacement;
  std::vector<ExprPtr> args;
  bool changed = false;
  for (const auto& a : e->args()) {
    args.push_back(replace_subexpr(a, target, replacement));
    changed = changed || args.back() != a;
  }
  return changed ? with_args(*e, std::move(args)) : e;
}

ExprPtr find_call(const ExprPtr& e, const std::function<bool(const ExprPtr&)>& pred) {
  if (e->is<MLCall>() && pred(e)) return e;
  for (const auto& a : e->args())
    if (auto f = find_call(a, pred)) return f;
  return nullptr;
}

std::optional<FilteredJoin> filtered_join_below(const PlanNode& node) {
  if (node.children().size() != 1) return std::nullopt;
  FilteredJoin fj;
  PlanPtr cur = node.child(0);
  while (cur->kind() == NodeKind::Filter) {
    fj.filters.push_back(cur);
    cur = cur->child(0);
  }
  if (cur->kind() != NodeKind::Join) return std::nullopt;
  fj.join = cur;
  return fj;
}

PlanPtr rebuild_filters(const std::vector<PlanPtr>& filters, PlanPtr join) {
  PlanPtr cur = std::move(join);
  for (auto it = filters.rbegin(); it != filters.rend(); ++it) cur = (*it)->with_children({cur});
  return cur;
}

ExprPtr ml_with_attrs(const ExprPtr& call, MLAttrs attrs, std::vector<ExprPtr> args) {
  return ml(call->as<MLCall>()->fn, std::move(args), std::move(attrs));
}

}  // namespace optbench::detail
