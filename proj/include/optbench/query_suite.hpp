#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "optbench/catalog.hpp"
#include "optbench/models.hpp"
#include "optbench/plan.hpp"

namespace optbench {

/// Tables of one query's synthetic dataset. Row counts are the scale-1 sizes;
/// `sparsity` is the fraction of zeroed numeric feature cells where a dataset
/// has a sparsity knob (Credit's V columns), ignored elsewhere.
struct DatasetSpec {
  std::string dataset;
  std::map<std::string, std::size_t> rows;
  std::uint64_t seed = 7;
  double sparsity = 0.0;
};

struct ModelSpecEntry {
  std::string id;
  std::string kind;   // model_kind_name of the payload
  std::string shape;  // human-readable, e.g. "81x32"
};

struct SuiteEntry {
  std::string id;
  std::string description;
  std::string ml_udf;  // the model family as the suite summary labels it
  PlanPtr plan;
  DatasetSpec dataset;
  std::vector<ModelSpecEntry> models;
  std::set<MLFunctionId> expected_ml_functions;
};

/// Query ids in suite order.
const std::vector<std::string>& suite_query_ids();

/// Models are generated from a fixed seed so plan documents (which inline tree
/// specs and shapes) are stable. Throws UnknownQuery.
ModelStore build_models(const std::string& query_id);
PlanPtr build_query(const std::string& query_id);
SuiteEntry suite_entry(const std::string& query_id);

/// Scale-1 dataset spec of a query, with fact-table rows multiplied by `scale`.
DatasetSpec dataset_spec(const std::string& query_id, std::uint64_t seed = 7, double scale = 1.0);

/// Deterministic synthetic tables for `spec`. Throws InvalidSpec.
Catalog generate_dataset(const DatasetSpec& spec);

/// Dataset plus model relations, ready to execute the query's plan.
struct QueryData {
  Catalog catalog;
  ModelStore models;
};
QueryData generate_query_data(const std::string& query_id, std::uint64_t seed = 7, double scale = 1.0);

nlohmann::json dataset_spec_to_json(const DatasetSpec& s);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
nlohmann::json suite_entry_to_json(const SuiteEntry& e);

/// Directory of checked-in plan documents: $OPTBENCH_SUITE_DIR, else the
/// source tree's suite/.
std::filesystem::path suite_dir();

/// Writes plans/<id>.json, specs/<id>.json and models/<id>/ under `dir`.
void export_suite(const std::filesystem::path& dir);

}  // namespace optbench
