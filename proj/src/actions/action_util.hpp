#pragma once

// Helpers shared by the built-in rewrite actions.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "optbench/rewrite.hpp"

namespace optbench::detail {

/// A column name derived from `seed` so that replaying a rewrite yields the same plan.
std::string fresh_name(std::string_view base, std::uint64_t seed, const Schema& taken);
std::string fresh_name(std::string_view base, std::uint64_t seed, const std::vector<const Schema*>& taken,
                       const std::vector<std::string>& reserved = {});

/// True when `e` references at least one column and all of them are in `s`.
bool columns_within(const Expr& e, const Schema& s);

/// Replaces every subexpression structurally equal to `target`.
ExprPtr replace_subexpr(const ExprPtr& e, const Expr& target, const ExprPtr& replacement);

/// Rebuilds `e` bottom-up; `fn` sees each node with already-rewritten operands
/// and returns a replacement or null to keep it.
ExprPtr transform_bottom_up(const ExprPtr& e, const std::function<ExprPtr(const ExprPtr& original, const ExprPtr& rebuilt)>& fn);

/// First MLCall (pre-order) satisfying `pred`, or null.
ExprPtr find_call(const ExprPtr& e, const std::function<bool(const ExprPtr&)>& pred);

/// A node's child reached through zero or more Filters, ending at a Join.
struct FilteredJoin {
  std::vector<PlanPtr> filters;  // top-down
  PlanPtr join;
};
std::optional<FilteredJoin> filtered_join_below(const PlanNode& node);
/// Rebuilds the Filter chain over a replacement join.
PlanPtr rebuild_filters(const std::vector<PlanPtr>& filters, PlanPtr join);

ExprPtr ml_with_attrs(const ExprPtr& call, MLAttrs attrs, std::vector<ExprPtr> args);

}  // namespace optbench::detail
