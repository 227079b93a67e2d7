#include "optbench/bench.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <sstream>

#include "optbench/plan_json.hpp"

namespace optbench {

using nlohmann::json;

namespace {

const char* const kReportSchemaText =
#include "report_schema.inc"
    ;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<OptimizerProfile> with_baseline_first(const std::vector<OptimizerProfile>& optimizers,
                                                  const std::string& baseline) {
  std::vector<OptimizerProfile> out;
  auto it = std::find_if(optimizers.begin(), optimizers.end(), [&](const auto& p) { return p.name == baseline; });
  if (it != optimizers.end()) {
    out.push_back(*it);
  } else {
    auto builtins = builtin_profiles();
    auto b = std::find_if(builtins.begin(), builtins.end(), [&](const auto& p) { return p.name == baseline; });
    if (b == builtins.end()) fail(ErrorCode::UnknownOptimizer, "baseline '" + baseline + "' is not a built-in profile", baseline);
    out.push_back(*b);
  }
  for (const auto& p : optimizers)
    if (p.name != baseline) out.push_back(p);
  return out;
}

EquivalenceVerdict verdict(const std::string& q, const BenchRun& a, const ResultSet& ra, const BenchRun& b,
                           const ResultSet& rb) {
  EquivalenceVerdict v{q, a.optimizer, b.optimizer, false, {}};
  if (a.result_digest == b.result_digest) {
    v.equivalent = true;
    v.message = "digest match";
    return v;
  }
  try {
    const auto rep = compare_results(ra, rb);
    v.equivalent = rep.equivalent;
    v.message = rep.equivalent ? "equal within tolerance" : rep.message;
  } catch (const Error& e) {
    v.message = e.what();
  }
  return v;
}

}  // namespace

const BenchRun* BenchmarkReport::find(const std::string& query, const std::string& optimizer) const {
  for (const auto& r : runs)
    if (r.query_id == query && r.optimizer == optimizer) return &r;
  return nullptr;
}

BenchmarkReport run_benchmark(const std::vector<std::string>& queries, const std::vector<OptimizerProfile>& optimizers,
                              const ActionRegistry& actions, const BenchConfig& config, const BenchProgress& progress) {
  if (config.repetitions < 1) fail(ErrorCode::ValidationError, "repetitions must be at least 1", "/repetitions");
  const auto profiles = with_baseline_first(optimizers, config.baseline);
  const auto start = std::chrono::steady_clock::now();

  BenchmarkReport report;
  report.config = config;
  report.timestamp = utc_timestamp();
  const std::size_t total = queries.size() * profiles.size();

  for (const auto& q : queries) {
    // One catalog per query, shared by every optimizer.
    const QueryData data = generate_query_data(q, config.seed, config.scale);
    const PlanPtr plan = build_query(q);
    std::vector<std::pair<std::size_t, ResultSet>> results;  // (run index, result)

    for (const auto& profile : profiles) {
      BenchRun run;
      run.query_id = q;
      run.optimizer = profile.name;
      run.input_hash = plan->hash();
      try {
        StatsCollector stats(data.catalog, data.models, config.stats);
        OptimizeContext ctx{data.models, data.catalog, stats, actions};
        const auto t0 = std::chrono::steady_clock::now();
        OptimizeResult opt = optimize(profile, plan, ctx);
        run.optimize_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        run.plan_hash = opt.plan->hash();
        run.final_cost = opt.trace.final_cost;
        for (const auto& a : opt.trace.applied_sequence) run.applied_actions.push_back(a.action);
        run.trace_ref = q + "/" + profile.name;
        report.traces[run.trace_ref] = trace_to_json(opt.trace);

        ResultSet last;
        for (int i = 0; i <= config.repetitions; ++i) {
          ResultSet r = execute(opt.plan, data.catalog, data.models, config.exec);
          if (i > 0) run.latencies_ms.push_back(r.stats.wall_ms);
          last = std::move(r);
        }
        run.latency_ms = median(run.latencies_ms);
        run.result_digest = result_digest(last);
        run.ml_invocations = last.stats.ml_invocations;
        run.row_count = last.row_count;
        results.emplace_back(report.runs.size(), std::move(last));
      } catch (const Error& e) {
        run.ok = false;
        run.error = CellError{"OptimizerFailed", profile.name + " on " + q + ": " + e.what(),
                              std::string(error_code_name(e.code()))};
      } catch (const std::exception& e) {
        run.ok = false;
        run.error = CellError{"OptimizerFailed", profile.name + " on " + q + ": " + e.what(), "Internal"};
      }
      report.runs.push_back(std::move(run));
      if (progress) progress(report.runs.back(), report.runs.size(), total);
    }

    // The baseline runs first, so a successful baseline is results[0].
    const bool have_baseline = !results.empty() && report.runs[results[0].first].optimizer == config.baseline;
    for (std::size_t i = 0; i < results.size(); ++i) {
      BenchRun& ri = report.runs[results[i].first];
      for (std::size_t j = i + 1; j < results.size(); ++j) {
        const BenchRun& rj = report.runs[results[j].first];
        auto v = verdict(q, ri, results[i].second, rj, results[j].second);
        if (have_baseline && i == 0) report.runs[results[j].first].matches_baseline = v.equivalent;
        report.equivalence.push_back(std::move(v));
      }
      if (have_baseline && i == 0) ri.matches_baseline = true;
    }
  }
  report.total_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

json report_to_json(const BenchmarkReport& r) {
  json runs = json::array();
  for (const auto& x : r.runs) {
    json j = {{"query_id", x.query_id},
              {"optimizer", x.optimizer},
              {"status", x.ok ? "ok" : "failed"},
              {"latency_ms", x.latency_ms},
              {"latencies_ms", x.latencies_ms},
              {"optimize_ms", x.optimize_ms},
              {"result_digest", x.result_digest},
              {"ml_invocations", x.ml_invocations},
              {"row_count", x.row_count},
              {"input_hash", hex64(x.input_hash)},
              {"plan_hash", x.ok ? json(hex64(x.plan_hash)) : json(nullptr)},
              {"final_cost", x.final_cost},
              {"applied_actions", x.applied_actions},
              {"matches_baseline", x.matches_baseline ? json(*x.matches_baseline) : json(nullptr)},
              {"trace_ref", x.trace_ref.empty() ? json(nullptr) : json(x.trace_ref)},
              {"error", x.error ? json{{"code", x.error->code}, {"message", x.error->message}, {"detail", x.error->detail}}
                                : json(nullptr)}};
    runs.push_back(std::move(j));
  }
  json eq = json::object();
  for (const auto& v : r.equivalence) {
    if (!eq.contains(v.query_id)) eq[v.query_id] = json::array();
    eq[v.query_id].push_back({{"left", v.left}, {"right", v.right}, {"equivalent", v.equivalent}, {"message", v.message}});
  }
  json traces = json::object();
  for (const auto& [k, t] : r.traces) traces[k] = t;
  return {{"format", kReportFormat},
          {"environment",
           {{"seed", r.config.seed},
            {"scale", r.config.scale},
            {"repetitions", r.config.repetitions},
            {"timestamp", r.timestamp},
            {"baseline", r.config.baseline},
            {"batch_size", r.config.exec.batch_size},
            {"deterministic", r.config.exec.deterministic},
            {"stats_sample_size", r.config.stats.sample_size},
            {"stats_seed", r.config.stats.seed}}},
          {"runs", std::move(runs)},
          {"equivalence", std::move(eq)},
          {"traces", std::move(traces)},
          {"total_ms", r.total_ms}};
}

std::string report_to_csv(const BenchmarkReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "query_id,optimizer,status,latency_ms,optimize_ms,ml_invocations,row_count,result_digest,plan_hash,final_cost,"
        "matches_baseline,applied_actions,error_code\n";
  for (const auto& x : r.runs) {
    std::string acts;
    for (const auto& a : x.applied_actions) acts += (acts.empty() ? "" : ";") + a;
    os << x.query_id << ',' << x.optimizer << ',' << (x.ok ? "ok" : "failed") << ',' << x.latency_ms << ','
       << x.optimize_ms << ',' << x.ml_invocations << ',' << x.row_count << ',' << x.result_digest << ','
       << (x.ok ? hex64(x.plan_hash) : "") << ',' << x.final_cost << ','
       << (x.matches_baseline ? (*x.matches_baseline ? "true" : "false") : "") << ',' << acts << ','
       << (x.error ? x.error->detail : "") << '\n';
  }
  return os.str();
}

// ---- schema validation ----------------------------------------------------

namespace {

bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "integer") return v.is_number_integer() || (v.is_number_float() && v.get<double>() == static_cast<double>(static_cast<long long>(v.get<double>())));
  if (t == "number") return v.is_number();
  return false;
}

void check(const json& v, const json& s, const std::string& at, std::vector<std::string>& out) {
  if (s.contains("type")) {
    const auto& t = s["type"];
    bool ok = false;
    if (t.is_string()) ok = has_type(v, t.get<std::string>());
    else
      for (const auto& alt : t) ok = ok || has_type(v, alt.get<std::string>());
    if (!ok) {
      out.push_back(at + ": expected type " + t.dump());
      return;
    }
  }
  if (s.contains("const") && v != s["const"]) out.push_back(at + ": expected " + s["const"].dump());
  if (s.contains("enum") && std::find(s["enum"].begin(), s["enum"].end(), v) == s["enum"].end())
    out.push_back(at + ": value " + v.dump() + " not in " + s["enum"].dump());
  if (s.contains("minimum") && v.is_number() && v.get<double>() < s["minimum"].get<double>())
    out.push_back(at + ": below minimum " + s["minimum"].dump());
  if (v.is_object()) {
    if (s.contains("required"))
      for (const auto& k : s["required"])
        if (!v.contains(k.get<std::string>())) out.push_back(at + ": missing '" + k.get<std::string>() + "'");
    const json props = s.value("properties", json::object());
    for (const auto& [k, child] : v.items()) {
      if (props.contains(k)) {
        check(child, props[k], at + "/" + k, out);
      } else if (s.contains("additionalProperties")) {
        const auto& ap = s["additionalProperties"];
        if (ap.is_boolean() && !ap.get<bool>()) out.push_back(at + ": unexpected '" + k + "'");
        else if (ap.is_object()) check(child, ap, at + "/" + k, out);
      }
    }
  }
  if (v.is_array() && s.contains("items"))
    for (std::size_t i = 0; i < v.size(); ++i) check(v[i], s["items"], at + "/" + std::to_string(i), out);
}

}  // namespace

std::vector<std::string> validate_json_schema(const json& doc, const json& schema) {
  std::vector<std::string> out;
  check(doc, schema, "", out);
  return out;
}

const json& report_schema() {
  static const json s = json::parse(kReportSchemaText);
  return s;
}

std::vector<std::string> validate_report(const json& report) {
  auto out = validate_json_schema(report, report_schema());
  if (!out.empty()) return out;
  // Cross-field rules the schema subset cannot express.
  const auto& traces = report["traces"];
  for (std::size_t i = 0; i < report["runs"].size(); ++i) {
    const auto& r = report["runs"][i];
    const std::string at = "/runs/" + std::to_string(i);
    const bool ok = r["status"] == "ok";
    if (ok == !r["error"].is_null()) out.push_back(at + ": error must be set exactly when status is failed");
    if (ok && (r["trace_ref"].is_null() || !traces.contains(r["trace_ref"].get<std::string>())))
      out.push_back(at + ": trace_ref does not name a trace");
    if (ok && static_cast<int>(r["latencies_ms"].size()) != report["environment"]["repetitions"].get<int>())
      out.push_back(at + ": latencies_ms must hold one entry per repetition");
  }
  for (const auto& [q, verdicts] : report["equivalence"].items()) {
    for (const auto& v : verdicts) {
      std::string dl, dr;
      for (const auto& r : report["runs"]) {
        if (r["query_id"] != q) continue;
        if (r["optimizer"] == v["left"]) dl = r["result_digest"];
        if (r["optimizer"] == v["right"]) dr = r["result_digest"];
      }
      if (!dl.empty() && dl == dr && !v["equivalent"].get<bool>())
        out.push_back("/equivalence/" + q + ": equal digests must be equivalent");
    }
  }
  return out;
}

// ---- applicability --------------------------------------------------------

std::vector<ActionPtr> desk_actions() {
  std::vector<ActionPtr> out;
  for (const auto& a : builtin_actions())
    out.push_back(a->name() == "MatMulDense2Sparse" ? a->with_params(a->name(), {{"min_rows", kDeskMinRows}}) : a);
  return out;
}

std::map<std::string, std::vector<std::string>> applicability(std::uint64_t seed, double scale) {
  std::map<std::string, std::vector<std::string>> out;
  const auto actions = desk_actions();
  for (const auto& a : actions) out[a->name()];
  for (const auto& q : suite_query_ids()) {
    const QueryData data = generate_query_data(q, seed, scale);
    const PlanPtr plan = build_query(q);
    StatsCollector stats(data.catalog, data.models);
    RewriteContext ctx{data.models, &data.catalog, &stats};
    for (const auto& a : actions) {
      try {
        if (apply_plan_rewrite(*a, plan, ctx).modified) out[a->name()].push_back(q);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NotApplicable && e.code() != ErrorCode::UnsupportedConvConfig) throw;
      }
    }
  }
  return out;
}

json applicability_to_json(const std::map<std::string, std::vector<std::string>>& m) {
  json actions = json::object();
  for (const auto& [a, qs] : m) actions[a] = qs;
  return {{"format", kApplicabilityFormat}, {"min_rows", kDeskMinRows}, {"actions", actions}};
}

std::map<std::string, std::vector<std::string>> applicability_from_json(const json& j) {
  if (!j.is_object() || j.value("format", "") != kApplicabilityFormat)
    fail(ErrorCode::ParseError, "expected format " + std::string(kApplicabilityFormat), "/format");
  return j.at("actions").get<std::map<std::string, std::vector<std::string>>>();
}

// ---- plan diff ------------------------------------------------------------

namespace {

std::uint64_t shape_hash(const PlanNode& n) {
  std::uint64_t h = stable_hash(node_kind_name(n.kind()));
  for (const auto& c : n.children()) h = hash_combine(h, shape_hash(*c));
  return hash_combine(h, n.children().size());
}

bool aligns(const PlanNode& a, const PlanNode& b) { return a.hash() == b.hash() || shape_hash(a) == shape_hash(b); }

std::string describe_change(const PlanNode& a, const PlanNode& b) {
  const json la = a.local_json(), lb = b.local_json();
  std::string keys;
  for (const auto& [k, v] : la.items())
    if (!lb.contains(k) || lb[k] != v) keys += (keys.empty() ? "" : ", ") + k;
  for (const auto& [k, v] : lb.items())
    if (!la.contains(k)) keys += (keys.empty() ? "" : ", ") + k;
  return "changed " + keys;
}

class Differ {
 public:
  std::vector<PlanDiffEntry> out;

  void run(const PlanPtr& a, const std::string& pa, const PlanPtr& b, const std::string& pb) {
    if (a->hash() == b->hash()) return;
    if (a->kind() == b->kind() && a->children().size() == b->children().size()) {
      if (a->local_json() != b->local_json())
        out.push_back({PlanDiffEntry::Change::AttrChanged, pa, pb, std::string(node_kind_name(a->kind())), describe_change(*a, *b)});
      for (std::size_t i = 0; i < a->children().size(); ++i)
        run(a->child(i), child_path(pa, i), b->child(i), child_path(pb, i));
      return;
    }
    for (std::size_t i = 0; i < b->children().size(); ++i) {
      if (!aligns(*a, *b->child(i)) && a->kind() != b->child(i)->kind()) continue;
      out.push_back({PlanDiffEntry::Change::Added, "", pb, std::string(node_kind_name(b->kind())), b->label()});
      for (std::size_t j = 0; j < b->children().size(); ++j)
        if (j != i) subtree(b->child(j), child_path(pb, j), PlanDiffEntry::Change::Added);
      run(a, pa, b->child(i), child_path(pb, i));
      return;
    }
    for (std::size_t i = 0; i < a->children().size(); ++i) {
      if (!aligns(*a->child(i), *b) && a->child(i)->kind() != b->kind()) continue;
      out.push_back({PlanDiffEntry::Change::Removed, pa, "", std::string(node_kind_name(a->kind())), a->label()});
      for (std::size_t j = 0; j < a->children().size(); ++j)
        if (j != i) subtree(a->child(j), child_path(pa, j), PlanDiffEntry::Change::Removed);
      run(a->child(i), child_path(pa, i), b, pb);
      return;
    }
    subtree(a, pa, PlanDiffEntry::Change::Removed);
    subtree(b, pb, PlanDiffEntry::Change::Added);
  }

 private:
  void subtree(const PlanPtr& n, const std::string& path, PlanDiffEntry::Change c) {
    visit_preorder(n, [&](const PlanPtr& node, const std::string& rel) {
      // visit_preorder numbers from "0"; rebase onto `path`.
      const std::string full = path + rel.substr(1);
      const bool left = c == PlanDiffEntry::Change::Removed;
      out.push_back({c, left ? full : "", left ? "" : full, std::string(node_kind_name(node->kind())), node->label()});
    });
  }
};

std::string call_key(const Expr& call) {
  const auto* m = call.as<MLCall>();
  return std::string(ml_function_name(m->fn)) + "|" + m->attrs.model_id.value_or("");
}

}  // namespace

std::string_view diff_change_name(PlanDiffEntry::Change c) {
  switch (c) {
    case PlanDiffEntry::Change::Added: return "added";
    case PlanDiffEntry::Change::Removed: return "removed";
    case PlanDiffEntry::Change::AttrChanged: return "attr_changed";
  }
  return "?";
}

PlanDiff diff_plans(const PlanPtr& left, const PlanPtr& right) {
  PlanDiff d;
  Differ differ;
  differ.run(left, "0", right, "0");
  d.entries = std::move(differ.out);

  // Pair calls by (function, model) in pre-order and report owners that moved.
  std::map<std::string, std::vector<std::string>> lsites, rsites;
  for (const auto& s : ml_call_sites(left)) lsites[call_key(*s.call)].push_back(s.node_path);
  for (const auto& s : ml_call_sites(right)) rsites[call_key(*s.call)].push_back(s.node_path);
  for (const auto& [key, lpaths] : lsites) {
    auto it = rsites.find(key);
    if (it == rsites.end()) continue;
    const auto& rpaths = it->second;
    for (std::size_t i = 0; i < std::min(lpaths.size(), rpaths.size()); ++i) {
      if (lpaths[i] == rpaths[i]) continue;
      const auto bar = key.find('|');
      d.ml_moves.push_back({key.substr(0, bar), key.substr(bar + 1), lpaths[i], rpaths[i]});
    }
  }
  return d;
}

json plan_diff_to_json(const PlanDiff& d) {
  json entries = json::array();
  for (const auto& e : d.entries)
    entries.push_back({{"change", diff_change_name(e.change)},
                       {"left_path", e.left_path.empty() ? json(nullptr) : json(e.left_path)},
                       {"right_path", e.right_path.empty() ? json(nullptr) : json(e.right_path)},
                       {"kind", e.kind},
                       {"description", e.description}});
  json moves = json::array();
  for (const auto& m : d.ml_moves)
    moves.push_back({{"function", m.function}, {"model_id", m.model_id}, {"left_path", m.left_path}, {"right_path", m.right_path}});
  return {{"entries", entries}, {"ml_moves", moves}, {"empty", d.empty()}};
}

}  // namespace optbench
