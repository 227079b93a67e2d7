#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "optbench/executor.hpp"
#include "optbench/optimizer.hpp"
#include "optbench/query_suite.hpp"

namespace optbench {

inline constexpr std::string_view kReportFormat = "optbench-report/1";

struct BenchConfig {
  int repetitions = 5;  // timed executions per cell, after one discarded warm-up
  std::uint64_t seed = 7;
  double scale = 1.0;
  StatsConfig stats;
  ExecConfig exec;
  std::string baseline = "NoOpt";  // the profile every cell is compared against
};

struct CellError {
  std::string code;
  std::string message;
  std::string detail;
};

struct BenchRun {
  std::string query_id;
  std::string optimizer;
  bool ok = true;
  std::optional<CellError> error;  // set when !ok (OptimizerFailed)
  double latency_ms = 0.0;         // median of the timed executions
  std::vector<double> latencies_ms;
  double optimize_ms = 0.0;
  std::string result_digest;
  std::uint64_t ml_invocations = 0;
  std::size_t row_count = 0;
  std::uint64_t input_hash = 0;
  std::uint64_t plan_hash = 0;
  double final_cost = 0.0;
  std::vector<std::string> applied_actions;
  std::optional<bool> matches_baseline;
  std::string trace_ref;  // key into BenchmarkReport::traces
};

struct EquivalenceVerdict {
  std::string query_id;
  std::string left;
  std::string right;
  bool equivalent = false;
  std::string message;
};

struct BenchmarkReport {
  std::vector<BenchRun> runs;
  std::vector<EquivalenceVerdict> equivalence;
  std::map<std::string, nlohmann::json> traces;
  BenchConfig config;
  std::string timestamp;
  double total_ms = 0.0;

  const BenchRun* find(const std::string& query, const std::string& optimizer) const;
};

using BenchProgress = std::function<void(const BenchRun&, std::size_t done, std::size_t total)>;

/// Runs every (query, optimizer) cell on one catalog per query. A cell whose
/// optimization or execution throws is recorded as failed; the matrix goes on.
/// The baseline profile is always run for each query, listed or not.
BenchmarkReport run_benchmark(const std::vector<std::string>& queries, const std::vector<OptimizerProfile>& optimizers,
                              const ActionRegistry& actions, const BenchConfig& config = {},
                              const BenchProgress& progress = {});

nlohmann::json report_to_json(const BenchmarkReport& r);
std::string report_to_csv(const BenchmarkReport& r);

/// Subset JSON Schema check (type, required, properties, additionalProperties,
/// items, enum, const, minimum, pattern-free). Returns one message per violation.
std::vector<std::string> validate_json_schema(const nlohmann::json& doc, const nlohmann::json& schema);
/// Validates against the bundled report schema.
std::vector<std::string> validate_report(const nlohmann::json& report);
const nlohmann::json& report_schema();

// ---- applicability --------------------------------------------------------

inline constexpr std::string_view kApplicabilityFormat = "optbench-applicability/1";
/// Row threshold the desk-scale suite uses for MatMulDense2Sparse.
inline constexpr double kDeskMinRows = 1000;

/// The nine built-ins with MatMulDense2Sparse's min_rows lowered to kDeskMinRows.
std::vector<ActionPtr> desk_actions();

/// For each desk action, the suite queries on which one application changes
/// the plan (statistics from the generated catalog).
std::map<std::string, std::vector<std::string>> applicability(std::uint64_t seed = 7, double scale = 1.0);
nlohmann::json applicability_to_json(const std::map<std::string, std::vector<std::string>>& m);
std::map<std::string, std::vector<std::string>> applicability_from_json(const nlohmann::json& j);

// ---- plan diff ------------------------------------------------------------

struct PlanDiffEntry {
  enum class Change { Added, Removed, AttrChanged } change;
  std::string left_path;   // empty for Added
  std::string right_path;  // empty for Removed
  std::string kind;        // node kind name
  std::string description;
};

/// An ML call whose owning node sits at a different path on each side.
struct MLCallMove {
  std::string function;
  std::string model_id;
  std::string left_path;
  std::string right_path;
};

struct PlanDiff {
  std::vector<PlanDiffEntry> entries;
  std::vector<MLCallMove> ml_moves;
  bool empty() const { return entries.empty() && ml_moves.empty(); }
};

/// Top-down alignment: identical subtrees are skipped, a node inserted or
/// removed above a matching subtree is reported alone, and same-kind nodes
/// with different local content are attr-changed.
PlanDiff diff_plans(const PlanPtr& left, const PlanPtr& right);
nlohmann::json plan_diff_to_json(const PlanDiff& d);
std::string_view diff_change_name(PlanDiffEntry::Change c);

}  // namespace optbench
