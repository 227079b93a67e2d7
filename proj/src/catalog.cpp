#include "optbench/catalog.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "optbench/plan_json.hpp"

namespace optbench {

using nlohmann::json;

void Table::validate() const {
  if (columns.size() != schema.size())
    fail(ErrorCode::ValidationError, "table '" + name + "' has " + std::to_string(columns.size()) + " columns, schema has " +
                                         std::to_string(schema.size()));
  const std::size_t n = rows();
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].size() != n) fail(ErrorCode::ValidationError, "table '" + name + "' has ragged columns");
    for (std::size_t r = 0; r < n; ++r)
      if (!columns[c][r].conforms_to(schema[c].dtype))
        fail(ErrorCode::TypeError, "table '" + name + "' row " + std::to_string(r) + " column " + schema[c].name +
                                       " is not " + schema[c].dtype.to_string());
  }
}

void Catalog::add(Table t) {
  t.validate();
  auto& counts = ndv_[t.name];
  counts.clear();
  for (std::size_t c = 0; c < t.schema.size(); ++c) {
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(t.rows());
    for (const auto& v : t.columns[c]) seen.insert(v.hash());
    counts[t.schema[c].name] = static_cast<double>(seen.size());
  }
  const std::string name = t.name;
  tables_[name] = std::make_shared<const Table>(std::move(t));
  ++version_;
}

const Table& Catalog::get(const std::string& name) const { return *get_ptr(name); }

TablePtr Catalog::get_ptr(const std::string& name) const {
  auto it = tables_.find(name);
  if (it == tables_.end()) fail(ErrorCode::UnknownTable, "unknown table '" + name + "'", name);
  return it->second;
}

std::vector<std::string> Catalog::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : tables_) out.push_back(n);
  return out;
}

double Catalog::ndv(const std::string& table, const std::string& column) const {
  auto t = ndv_.find(table);
  if (t == ndv_.end()) fail(ErrorCode::UnknownTable, "unknown table '" + table + "'", table);
  auto c = t->second.find(column);
  if (c == t->second.end()) fail(ErrorCode::UnresolvedColumn, "no column '" + column + "' in " + table, column);
  return c->second;
}

Table model_table(const std::string& model_id, const ModelPayload& payload) {
  Table t;
  t.name = std::string(kModelTablePrefix) + model_id;
  if (auto* w = std::get_if<DenseMatrix>(&payload)) {
    t.schema = Schema({{"k", DType::int64()}, {"w", DType::vector(w->cols)}});
    t.columns.resize(2);
    for (int r = 0; r < w->rows; ++r) {
      t.columns[0].emplace_back(static_cast<std::int64_t>(r));
      t.columns[1].emplace_back(std::vector<double>(w->data.begin() + static_cast<std::ptrdiff_t>(r) * w->cols,
                                                    w->data.begin() + static_cast<std::ptrdiff_t>(r + 1) * w->cols));
    }
  } else if (auto* f = std::get_if<TreeEnsemble>(&payload)) {
    t.schema = Schema({{"tree_id", DType::int64()}});
    t.columns.resize(1);
    for (std::size_t i = 0; i < f->trees.size(); ++i) t.columns[0].emplace_back(static_cast<std::int64_t>(i));
  } else {
    fail(ErrorCode::ValidationError, "model '" + model_id + "' has no relational form");
  }
  return t;
}

void Catalog::add_model_tables(const ModelStore& models) {
  for (const auto& id : models.ids()) {
    const auto& m = models.get(id);
    if (std::holds_alternative<DenseMatrix>(m) || std::holds_alternative<TreeEnsemble>(m)) add(model_table(id, m));
  }
}

namespace {

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string encode_cell(const Value& v) {
  switch (v.kind()) {
    case TypeKind::Int64: return std::to_string(v.as_int());
    case TypeKind::Float64: return format_double(v.as_double());
    case TypeKind::String: return quote(v.as_string());
    case TypeKind::Bool: return v.as_bool() ? "true" : "false";
    case TypeKind::Vector: {
      std::string s = "[";
      for (std::size_t i = 0; i < v.vec().size(); ++i) s += (i ? "," : "") + format_double(v.vec()[i]);
      return quote(s + "]");
    }
    case TypeKind::Matrix: {
      const auto& m = v.mat();
      std::string s = "[";
      for (int r = 0; r < m.rows; ++r) {
        s += r ? ",[" : "[";
        for (int c = 0; c < m.cols; ++c) s += (c ? "," : "") + format_double(m.at(r, c));
        s += "]";
      }
      return quote(s + "]");
    }
  }
  return {};
}

/// Splits one CSV record; handles quoted fields with doubled quotes. Records never span lines.
std::vector<std::string> split_record(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) fail(ErrorCode::ParseError, "unterminated quote", "line " + std::to_string(line_no));
  out.push_back(std::move(cur));
  return out;
}

Value decode_cell(const std::string& s, const DType& t, const std::string& where) {
  try {
    switch (t.kind) {
      case TypeKind::Int64: {
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) break;
        return Value(v);
      }
      case TypeKind::Float64: return Value(std::stod(s));
      case TypeKind::String: return Value(s);
      case TypeKind::Bool:
        if (s == "true") return Value(true);
        if (s == "false") return Value(false);
        break;
      case TypeKind::Vector: {
        auto v = json::parse(s).get<std::vector<double>>();
        if (static_cast<int>(v.size()) != t.cols) break;
        return Value(std::move(v));
      }
      case TypeKind::Matrix: {
        auto rows = json::parse(s).get<std::vector<std::vector<double>>>();
        if (static_cast<int>(rows.size()) != t.rows) break;
        Matrix m{t.rows, t.cols, {}};
        for (const auto& r : rows) {
          if (static_cast<int>(r.size()) != t.cols) fail(ErrorCode::ParseError, "ragged matrix cell", where);
          m.data.insert(m.data.end(), r.begin(), r.end());
        }
        return Value(std::move(m));
      }
    }
  } catch (const std::exception&) {
  }
  fail(ErrorCode::ParseError, "cannot read '" + s.substr(0, 40) + "' as " + t.to_string(), where);
}

}  // namespace

void write_table_csv(const Table& t, const std::filesystem::path& csv, const std::filesystem::path& sidecar) {
  std::ofstream out(csv);
  if (!out) fail(ErrorCode::IoError, "cannot write " + csv.string());
  for (std::size_t c = 0; c < t.schema.size(); ++c) out << (c ? "," : "") << t.schema[c].name;
  out << "\n";
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.schema.size(); ++c) out << (c ? "," : "") << encode_cell(t.columns[c][r]);
    out << "\n";
  }
  std::ofstream meta(sidecar);
  if (!meta) fail(ErrorCode::IoError, "cannot write " + sidecar.string());
  meta << json{{"format", "optbench-table/1"}, {"name", t.name}, {"rows", t.rows()}, {"columns", schema_to_json(t.schema)}}.dump(2)
       << "\n";
}

Table read_table_csv(const std::filesystem::path& csv, const std::filesystem::path& sidecar) {
  std::ifstream meta_in(sidecar);
  if (!meta_in) fail(ErrorCode::IoError, "cannot read " + sidecar.string());
  json meta;
  try {
    meta = json::parse(meta_in);
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, sidecar.string() + ": " + e.what());
  }
  if (meta.value("format", "") != "optbench-table/1") fail(ErrorCode::ParseError, "unsupported table sidecar", sidecar.string());
  Table t;
  t.name = meta.at("name").get<std::string>();
  t.schema = schema_from_json(meta.at("columns"), sidecar.string() + "#/columns");
  t.columns.resize(t.schema.size());

  std::ifstream in(csv);
  if (!in) fail(ErrorCode::IoError, "cannot read " + csv.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::ParseError, "empty CSV", csv.string());
  const auto header = split_record(line, 1);
  if (header.size() != t.schema.size()) fail(ErrorCode::ParseError, "CSV header does not match sidecar", csv.string());
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] != t.schema[c].name) fail(ErrorCode::ParseError, "CSV column '" + header[c] + "' not in sidecar order", csv.string());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_record(line, line_no);
    const std::string where = csv.string() + ":" + std::to_string(line_no);
    if (cells.size() != t.schema.size()) fail(ErrorCode::ParseError, "wrong number of cells", where);
    for (std::size_t c = 0; c < cells.size(); ++c) t.columns[c].push_back(decode_cell(cells[c], t.schema[c].dtype, where));
  }
  if (meta.contains("rows") && meta["rows"].get<std::size_t>() != t.rows())
    fail(ErrorCode::ParseError, "row count differs from sidecar", csv.string());
  return t;
}

Catalog Catalog::load_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::IoError, "table directory not found: " + dir.string());
  std::vector<std::filesystem::path> sidecars;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string f = e.path().filename().string();
    if (f.size() > 12 && f.ends_with(".schema.json")) sidecars.push_back(e.path());
  }
  std::sort(sidecars.begin(), sidecars.end());
  Catalog cat;
  for (const auto& s : sidecars) {
    std::string stem = s.filename().string();
    stem.resize(stem.size() - std::string(".schema.json").size());
    cat.add(read_table_csv(dir / (stem + ".csv"), s));
  }
  return cat;
}

void Catalog::save_dir(const std::filesystem::path& dir, bool include_model_tables) const {
  std::filesystem::create_directories(dir);
  for (const auto& [name, t] : tables_) {
    if (!include_model_tables && name.starts_with(kModelTablePrefix)) continue;
    std::string file = name;
    for (auto& c : file)
      if (c == ':' || c == '/') c = '_';
    write_table_csv(*t, dir / (file + ".csv"), dir / (file + ".schema.json"));
  }
}

}  // namespace optbench
