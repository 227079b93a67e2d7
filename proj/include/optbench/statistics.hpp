#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "optbench/catalog.hpp"
#include "optbench/models.hpp"
#include "optbench/plan.hpp"

namespace optbench {

enum class StatSource { Estimated, Sampled, Metadata };
std::string_view stat_source_name(StatSource s);

struct StatEntry {
  double value = 0.0;
  StatSource source = StatSource::Estimated;
};

using StatMap = std::map<std::string, StatEntry>;

/// Every statistic name a rule predicate may reference.
const std::vector<std::string>& statistic_names();
bool is_statistic_name(std::string_view name);

/// Default selectivities: equality 0.1, inequality 0.9, range 1/3,
/// AND = product, OR = capped sum, NOT = complement, anything else 1/3.
double predicate_selectivity(const Expr& predicate);

struct MLCallStats {
  std::string expr_path;
  ExprPtr call;
  StatMap entries;
};

struct NodeStats {
  std::string path;
  NodeKind kind;
  std::uint64_t hash = 0;
  StatMap entries;
  std::vector<MLCallStats> ml_calls;
};

struct StatsVector {
  std::vector<NodeStats> nodes;  // pre-order
  std::size_t sample_size = 0;
  std::uint64_t seed = 0;

  const NodeStats* at(const std::string& path) const;
};

struct StatsConfig {
  bool sampling = true;
  std::size_t sample_size = 1024;
  std::uint64_t seed = 42;
};

/// Sparsity of a feature input, measured over a seeded sample.
struct SampledFeatureStats {
  double nnz_ratio = 0.0;
  double zero_rows = 0.0;
  double zero_cols = 0.0;
  std::size_t rows = 0;
};

/// nnz / zero-row / zero-column fractions of a row-major sample matrix.
SampledFeatureStats feature_stats(const std::vector<std::vector<double>>& rows);

/// Estimates and samples plan statistics. Results are cached by subplan hash
/// (and expression hash for ML entries); the caches are dropped when the
/// catalog version changes. Safe for concurrent use.
class StatsCollector {
 public:
  StatsCollector(const Catalog& catalog, const ModelStore& models, StatsConfig config = {});

  const StatsConfig& config() const { return config_; }
  const Catalog& catalog() const { return catalog_; }
  const ModelStore& models() const { return models_; }

  double cardinality(const PlanPtr& node);
  /// Distinct-value estimate of `e` over the output of `node`.
  double distinct_values(const PlanPtr& node, const Expr& e);

  StatMap node_entries(const PlanPtr& node);
  /// Rows the owner feeds into each evaluation of its expressions.
  double input_rows(const PlanPtr& owner);
  /// Metadata and estimated entries of one call (no sampling).
  StatMap ml_static_entries(const PlanPtr& owner, const ExprPtr& call);
  /// Sampled sparsity of the call's first argument over the owner's input.
  /// Throws EmptySample or NonNumericFeature.
  SampledFeatureStats sample_ml_stats(const PlanPtr& owner, const ExprPtr& call);
  /// Static entries plus sampled ones when sampling is enabled and applicable.
  StatMap ml_entries(const PlanPtr& owner, const ExprPtr& call);

  StatsVector collect(const PlanPtr& root);

  std::uint64_t cache_hits() const { return cache_hits_; }
  std::uint64_t cache_misses() const { return cache_misses_; }

 private:
  void check_version();

  const Catalog& catalog_;
  const ModelStore& models_;
  StatsConfig config_;
  std::recursive_mutex mu_;
  std::uint64_t catalog_version_;
  std::unordered_map<std::uint64_t, double> card_cache_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, SampledFeatureStats> sample_cache_;
  std::unordered_map<std::uint64_t, StatsVector> collect_cache_;
  std::uint64_t cache_hits_ = 0;
  std::uint64_t cache_misses_ = 0;
};

nlohmann::json stat_map_to_json(const StatMap& m);
nlohmann::json stats_to_json(const StatsVector& s);

}  // namespace optbench
