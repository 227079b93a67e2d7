#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "optbench/catalog.hpp"
#include "optbench/models.hpp"
#include "optbench/plan.hpp"

namespace optbench {

struct ExecConfig {
  std::size_t batch_size = 1024;
  /// Single-threaded evaluation. When false, expression evaluation inside a
  /// batch is split across worker threads; results and counters are unchanged.
  bool deterministic = true;
  std::uint64_t seed = 0;  // global seed for the llm mock
};

struct OperatorStats {
  std::string path;
  NodeKind kind;
  std::uint64_t rows_in = 0;
  std::uint64_t rows_out = 0;
};

struct ExecStats {
  std::vector<OperatorStats> operators;  // pre-order
  std::uint64_t ml_invocations = 0;      // one per (row, MLCall) evaluation
  double wall_ms = 0.0;
};

struct ResultSet {
  Schema schema;
  std::vector<std::vector<Value>> columns;
  std::size_t row_count = 0;
  ExecStats stats;

  const Value& at(std::size_t row, std::size_t col) const { return columns[col][row]; }
};

ResultSet execute(const PlanPtr& plan, const Catalog& catalog, const ModelStore& models, const ExecConfig& config = {});

struct EquivalenceReport {
  bool equivalent = true;
  std::string message;
  std::optional<std::size_t> row;  // index into the sorted left result
  std::string key;                 // key-column values of the divergent row
};

/// Multiset comparison up to column order. Numeric cells match when
/// |a-b| <= tol * max(|a|,|b|) + 1e-12. Throws SchemaMismatch.
EquivalenceReport compare_results(const ResultSet& a, const ResultSet& b, const std::vector<std::string>& key_columns = {},
                                  double tol = 1e-6);

/// Order-insensitive digest of a result: columns by name, doubles rounded to
/// six significant digits (magnitudes below 1e-9 read as zero), rows sorted.
std::string result_digest(const ResultSet& r);

nlohmann::json exec_stats_to_json(const ExecStats& s);

}  // namespace optbench
