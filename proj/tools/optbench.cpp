// optbench command line: suite generation, optimization, benchmarking and the
// HTTP service. Every command works without the service running.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "optbench/bench.hpp"
#include "optbench/executor.hpp"
#include "optbench/plan_json.hpp"
#include "optbench/service.hpp"
#include "optbench/workbench.hpp"

using namespace optbench;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 7;
  double scale = 1.0;
  std::size_t sample_size = 1024;
  std::uint64_t stats_seed = 42;
  std::size_t batch_size = 1024;
  bool parallel = false;
  std::string work_dir;

  WorkbenchConfig workbench() const {
    WorkbenchConfig c;
    c.seed = seed;
    c.scale = scale;
    c.stats.sample_size = sample_size;
    c.stats.seed = stats_seed;
    c.exec.batch_size = batch_size;
    c.exec.deterministic = !parallel;
    if (!work_dir.empty()) c.work_dir = work_dir;
    return c;
  }
};

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path, path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, path + ": " + e.what(), "byte " + std::to_string(e.byte));
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path, path);
  out << text;
}

void print_json(const json& j, const std::string& out = {}) { write_text(out, j.dump(2) + "\n"); }

/// Registers --optimizer-doc uploads and returns the name to use.
std::string resolve_optimizer(Workbench& wb, const std::string& name, const std::string& doc_path) {
  if (doc_path.empty()) return name;
  return wb.upload_optimizer(read_json(doc_path), true).name;
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ','))
      if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"optbench: build, inspect and benchmark SQL+ML query optimizers"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Data seed")->capture_default_str();
  app.add_option("--scale", g.scale, "Fact-table scale factor")->capture_default_str();
  app.add_option("--sample-size", g.sample_size, "Rows sampled for ML statistics")->capture_default_str();
  app.add_option("--stats-seed", g.stats_seed, "Sampling seed")->capture_default_str();
  app.add_option("--batch-size", g.batch_size, "Executor batch size")->capture_default_str();
  app.add_flag("--parallel", g.parallel, "Allow multi-threaded expression evaluation");
  app.add_option("--work-dir", g.work_dir, "Directory persisting uploaded documents");

  // suite
  auto* suite = app.add_subcommand("suite", "Query suite");
  suite->require_subcommand(1);
  auto* suite_list = suite->add_subcommand("list", "List the suite queries");
  bool list_json = false;
  suite_list->add_flag("--json", list_json, "Print suite entries as JSON");
  auto* suite_gen = suite->add_subcommand("generate", "Write seeded catalogs and models as CSV/JSON");
  std::string gen_out = "data";
  std::vector<std::string> gen_queries;
  suite_gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
  suite_gen->add_option("--queries", gen_queries, "Queries (default: all)");
  auto* suite_export = suite->add_subcommand("export", "Write plan documents, specs and models");
  std::string export_dir;
  suite_export->add_option("--out", export_dir, "Output directory (default: the suite directory)");
  auto* suite_app = suite->add_subcommand("applicability", "Compute the action x query applicability matrix");
  std::string app_out;
  suite_app->add_option("--out", app_out, "Output file (default: stdout)");

  // plan
  auto* plan = app.add_subcommand("plan", "Plans");
  plan->require_subcommand(1);
  auto* plan_show = plan->add_subcommand("show", "Print a query plan, optionally optimized, with statistics");
  std::string query, optimizer, optimizer_doc;
  plan_show->add_option("--query", query, "Query id")->required();
  plan_show->add_option("--optimizer", optimizer, "Optimizer profile");
  plan_show->add_option("--optimizer-doc", optimizer_doc, "optbench-optimizer/1 document to apply");
  auto* plan_diff = plan->add_subcommand("diff", "Structural diff of two optimizers' plans");
  std::string left, right;
  plan_diff->add_option("--query", query, "Query id")->required();
  plan_diff->add_option("--left", left, "Left optimizer")->required();
  plan_diff->add_option("--right", right, "Right optimizer")->required();
  auto* plan_validate = plan->add_subcommand("validate", "Parse and validate a plan document");
  std::string plan_file;
  plan_validate->add_option("file", plan_file, "Plan document")->required();

  // stats
  auto* stats = app.add_subcommand("stats", "Per-node statistics of a query plan");
  stats->add_option("--query", query, "Query id")->required();

  // actions / optimizers
  auto* actions = app.add_subcommand("actions", "Rewrite actions");
  actions->require_subcommand(1);
  actions->add_subcommand("list", "List registered actions");
  auto* actions_validate = actions->add_subcommand("validate", "Validate an optbench-action/1 document");
  std::string doc_file;
  actions_validate->add_option("file", doc_file, "Action document")->required();
  auto* optimizers = app.add_subcommand("optimizers", "Optimizer profiles");
  optimizers->require_subcommand(1);
  optimizers->add_subcommand("list", "List registered optimizers");
  auto* opt_validate = optimizers->add_subcommand("validate", "Validate an optbench-optimizer/1 document");
  opt_validate->add_option("file", doc_file, "Optimizer document")->required();

  // optimize / execute
  auto* opt = app.add_subcommand("optimize", "Optimize a query and print the decision trace");
  std::string trace_out, plan_out;
  opt->add_option("--query", query, "Query id")->required();
  opt->add_option("--optimizer", optimizer, "Optimizer profile");
  opt->add_option("--optimizer-doc", optimizer_doc, "optbench-optimizer/1 document to apply");
  opt->add_option("--trace-out", trace_out, "Write the trace here instead of stdout");
  opt->add_option("--plan-out", plan_out, "Also write the optimized plan document");
  auto* exec = app.add_subcommand("execute", "Execute a query and summarize the result");
  std::size_t show_rows = 5;
  exec->add_option("--query", query, "Query id")->required();
  exec->add_option("--optimizer", optimizer, "Optimizer profile");
  exec->add_option("--optimizer-doc", optimizer_doc, "optbench-optimizer/1 document to apply");
  exec->add_option("--rows", show_rows, "Rows to print")->capture_default_str();

  // bench
  auto* bench = app.add_subcommand("bench", "Benchmark matrix");
  bench->require_subcommand(1);
  auto* bench_run = bench->add_subcommand("run", "Run queries x optimizers");
  std::vector<std::string> bench_queries, bench_optimizers, bench_docs;
  int repetitions = 5;
  std::string report_out = "report.json", csv_out;
  bench_run->add_option("--queries", bench_queries, "Queries, comma-separated (default: all)");
  bench_run->add_option("--optimizers", bench_optimizers, "Optimizers, comma-separated")
      ->default_str("NoOpt,Heuristic-FilterPushdown,RuleOpt,DP-CostOpt");
  bench_run->add_option("--optimizer-doc", bench_docs, "Extra optimizer documents to include");
  bench_run->add_option("--repetitions,-r", repetitions, "Timed executions per cell")->capture_default_str();
  bench_run->add_option("--out", report_out, "Report JSON")->capture_default_str();
  bench_run->add_option("--csv", csv_out, "CSV summary");
  auto* bench_validate = bench->add_subcommand("validate", "Validate a report against the schema");
  std::string report_file;
  bench_validate->add_option("file", report_file, "Report JSON")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::optional<int> port;
  std::string host = "127.0.0.1";
  serve->add_option("--port", port, "Port (default: $OPTBENCH_PORT or 8080)");
  serve->add_option("--host", host, "Bind address")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (suite->parsed()) {
      if (suite_list->parsed()) {
        if (list_json) {
          Workbench wb(g.workbench());
          print_json(wb.queries_json());
        } else {
          for (const auto& id : suite_query_ids()) {
            const auto e = suite_entry(id);
            std::cout << id << "\t" << e.ml_udf << "\t" << e.description << "\n";
          }
        }
      } else if (suite_gen->parsed()) {
        const auto ids = gen_queries.empty() ? suite_query_ids() : split_list(gen_queries);
        for (const auto& id : ids) {
          const auto data = generate_query_data(id, g.seed, g.scale);
          const std::filesystem::path dir = std::filesystem::path(gen_out) / id;
          data.catalog.save_dir(dir / "tables");
          data.models.save_dir(dir / "models");
          print_json(dataset_spec_to_json(dataset_spec(id, g.seed, g.scale)), (dir / "spec.json").string());
          std::cout << id << " -> " << dir.string() << "\n";
        }
      } else if (suite_export->parsed()) {
        const auto dir = export_dir.empty() ? suite_dir() : std::filesystem::path(export_dir);
        export_suite(dir);
        std::cout << "wrote " << dir.string() << "\n";
      } else if (suite_app->parsed()) {
        print_json(applicability_to_json(applicability(g.seed, g.scale)), app_out);
      }
    } else if (plan->parsed()) {
      Workbench wb(g.workbench());
      if (plan_show->parsed()) {
        const std::string name = resolve_optimizer(wb, optimizer, optimizer_doc);
        print_json(wb.plan_view(query, name.empty() ? std::nullopt : std::optional<std::string>(name)));
      } else if (plan_diff->parsed()) {
        print_json(wb.diff_view(query, left, right));
      } else if (plan_validate->parsed()) {
        const PlanPtr p = plan_from_document(read_json(plan_file));
        std::cout << "valid: " << node_count(*p) << " nodes, hash " << hex64(p->hash()) << "\n";
      }
    } else if (stats->parsed()) {
      Workbench wb(g.workbench());
      print_json(wb.stats_view(query));
    } else if (actions->parsed()) {
      Workbench wb(g.workbench());
      if (actions_validate->parsed()) {
        const auto a = wb.actions().upload(read_json(doc_file));
        std::cout << "valid: " << a->name() << " (template " << a->template_id() << ")\n";
      } else {
        for (const auto& a : wb.actions().list()) std::cout << a->name() << "\t" << a->summary() << "\n";
      }
    } else if (optimizers->parsed()) {
      Workbench wb(g.workbench());
      if (opt_validate->parsed()) {
        const auto p = profile_from_json(read_json(doc_file), wb.actions());
        std::cout << "valid: " << p.name << " (" << profile_kind_name(p.kind) << ")\n";
      } else {
        for (const auto& p : wb.optimizers().list())
          std::cout << p.name << "\t" << profile_kind_name(p.kind) << "\t" << p.description << "\n";
      }
    } else if (opt->parsed() || exec->parsed()) {
      Workbench wb(g.workbench());
      std::string name = resolve_optimizer(wb, optimizer, optimizer_doc);
      if (name.empty()) name = "NoOpt";
      const OptimizeResult r = wb.optimize(query, name);
      if (opt->parsed()) {
        print_json(trace_to_json(r.trace), trace_out);
        if (!plan_out.empty()) print_json(plan_to_document(*r.plan), plan_out);
      } else {
        const auto& q = wb.query(query);
        const ResultSet rs = execute(r.plan, q.data.catalog, q.data.models, g.workbench().exec);
        std::cout << "rows=" << rs.row_count << " ml_invocations=" << rs.stats.ml_invocations
                  << " wall_ms=" << rs.stats.wall_ms << " digest=" << result_digest(rs) << "\n";
        for (std::size_t c = 0; c < rs.schema.size(); ++c) std::cout << (c ? "\t" : "") << rs.schema[c].name;
        std::cout << "\n";
        for (std::size_t i = 0; i < std::min(show_rows, rs.row_count); ++i) {
          for (std::size_t c = 0; c < rs.schema.size(); ++c) std::cout << (c ? "\t" : "") << rs.at(i, c).to_string();
          std::cout << "\n";
        }
      }
    } else if (bench->parsed()) {
      if (bench_validate->parsed()) {
        const auto errors = validate_report(read_json(report_file));
        for (const auto& e : errors) std::cerr << e << "\n";
        std::cout << (errors.empty() ? "valid" : "invalid") << "\n";
        return errors.empty() ? 0 : 1;
      }
      Workbench wb(g.workbench());
      auto names = split_list(bench_optimizers);
      if (names.empty()) names = {"NoOpt", "Heuristic-FilterPushdown", "RuleOpt", "DP-CostOpt"};
      for (const auto& d : bench_docs) names.push_back(wb.upload_optimizer(read_json(d), true).name);
      std::vector<OptimizerProfile> profiles;
      for (const auto& n : names) profiles.push_back(wb.optimizers().get(n));
      BenchConfig cfg;
      cfg.repetitions = repetitions;
      cfg.seed = g.seed;
      cfg.scale = g.scale;
      cfg.stats = g.workbench().stats;
      cfg.exec = g.workbench().exec;
      const auto ids = bench_queries.empty() ? suite_query_ids() : split_list(bench_queries);
      const auto report = run_benchmark(ids, profiles, wb.actions(), cfg, [](const BenchRun& r, std::size_t done, std::size_t total) {
        std::cerr << "[" << done << "/" << total << "] " << r.query_id << " " << r.optimizer << " "
                  << (r.ok ? std::to_string(r.latency_ms) + " ms" : "FAILED: " + r.error->message) << "\n";
      });
      print_json(report_to_json(report), report_out);
      if (!csv_out.empty()) write_text(csv_out, report_to_csv(report));
      std::size_t failed = 0, mismatched = 0;
      for (const auto& r : report.runs) {
        failed += !r.ok;
        mismatched += r.matches_baseline.has_value() && !*r.matches_baseline;
      }
      std::cerr << report.runs.size() << " cells, " << failed << " failed, " << mismatched << " differ from baseline\n";
    } else if (serve->parsed()) {
      Workbench wb(g.workbench());
      Service svc(wb, ServiceConfig{host, resolve_port(port)});
      std::cerr << "optbench service on http://" << host << ":" << svc.start() << "\n";
      for (;;) std::this_thread::sleep_for(std::chrono::hours(1));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what();
    if (!e.detail().empty()) std::cerr << " (at " << e.detail() << ")";
    std::cerr << "\n";
    return 2;
  }
  return 0;
}
