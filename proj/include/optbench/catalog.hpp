#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "optbench/models.hpp"
#include "optbench/value.hpp"

namespace optbench {

struct Table {
  std::string name;
  Schema schema;
  std::vector<std::vector<Value>> columns;  // one vector per schema column

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
  /// Throws ValidationError unless every column has equal length and conforming values.
  void validate() const;
};

using TablePtr = std::shared_ptr<const Table>;

/// Prefix of the tables materialized from models: a matrix model W (k x n)
/// becomes `model:<id>` with columns (k:int64, w:vector(n)), one row per W row;
/// a forest model becomes `model:<id>` with a single column tree_id:int64.
inline constexpr std::string_view kModelTablePrefix = "model:";

class Catalog {
 public:
  void add(Table t);
  bool contains(const std::string& name) const { return tables_.count(name) != 0; }
  const Table& get(const std::string& name) const;  // throws UnknownTable
  TablePtr get_ptr(const std::string& name) const;
  std::vector<std::string> names() const;

  /// Exact distinct count of a column, computed when the table was added.
  double ndv(const std::string& table, const std::string& column) const;

  void add_model_tables(const ModelStore& models);

  /// Bumped on every change; statistics caches compare against it.
  std::uint64_t version() const { return version_; }

  /// Columnar CSV with a JSON schema sidecar per table (`<name>.csv` + `<name>.schema.json`).
  static Catalog load_dir(const std::filesystem::path& dir);
  void save_dir(const std::filesystem::path& dir, bool include_model_tables = false) const;

 private:
  std::map<std::string, TablePtr> tables_;
  std::map<std::string, std::map<std::string, double>> ndv_;
  std::uint64_t version_ = 0;
};

Table model_table(const std::string& model_id, const ModelPayload& payload);

void write_table_csv(const Table& t, const std::filesystem::path& csv, const std::filesystem::path& sidecar);
Table read_table_csv(const std::filesystem::path& csv, const std::filesystem::path& sidecar);

}  // namespace optbench
