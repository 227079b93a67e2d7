#include "optbench/workbench.hpp"

#include <fstream>

#include "optbench/plan_json.hpp"

namespace optbench {

using nlohmann::json;

namespace {

const std::vector<std::string> kDefaultBenchOptimizers = {"NoOpt", "Heuristic-FilterPushdown", "RuleOpt", "DP-CostOpt"};

std::string file_stem_for(const std::string& name) {
  std::string s = name;
  for (auto& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  return s;
}

json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) fail(ErrorCode::IoError, "cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, p.string() + ": " + e.what());
  }
}

}  // namespace

Workbench::Workbench(WorkbenchConfig config) : config_(std::move(config)) {
  if (config_.work_dir) load_uploads();
}

Workbench::QueryState& Workbench::query(const std::string& id) {
  std::lock_guard lock(queries_mu_);
  auto it = queries_.find(id);
  if (it != queries_.end()) return *it->second;
  auto st = std::make_unique<QueryState>();
  st->data = generate_query_data(id, config_.seed, config_.scale);
  st->plan = build_query(id);
  st->stats = std::make_unique<StatsCollector>(st->data.catalog, st->data.models, config_.stats);
  return *queries_.emplace(id, std::move(st)).first->second;
}

OptimizeResult Workbench::optimize(const std::string& query_id, const std::string& optimizer) {
  const OptimizerProfile profile = optimizers_.get(optimizer);
  QueryState& q = query(query_id);
  OptimizeContext ctx{q.data.models, q.data.catalog, *q.stats, actions_};
  return optbench::optimize(profile, q.plan, ctx);
}

json Workbench::queries_json() const {
  json out = json::array();
  for (const auto& id : suite_query_ids()) out.push_back(suite_entry_to_json(suite_entry(id)));
  return {{"queries", out}};
}

json Workbench::plan_view(const std::string& query_id, const std::optional<std::string>& optimizer) {
  QueryState& q = query(query_id);
  PlanPtr plan = q.plan;
  json trace = nullptr;
  if (optimizer) {
    OptimizeResult r = optimize(query_id, *optimizer);
    plan = r.plan;
    trace = trace_to_json(r.trace);
  }
  return {{"query", query_id},
          {"optimizer", optimizer ? json(*optimizer) : json(nullptr)},
          {"plan", plan_to_document(*plan, true)},
          {"plan_hash", hex64(plan->hash())},
          {"cost", CostModel{}.score(plan, *q.stats)},
          {"stats", stats_to_json(q.stats->collect(plan))},
          {"trace", trace}};
}

json Workbench::stats_view(const std::string& query_id) {
  QueryState& q = query(query_id);
  json out = stats_to_json(q.stats->collect(q.plan));
  out["query"] = query_id;
  out["cache"] = {{"hits", q.stats->cache_hits()}, {"misses", q.stats->cache_misses()}};
  return out;
}

json Workbench::actions_json() const {
  json out = json::array();
  for (const auto& a : actions_.list()) {
    json j = action_to_json(*a);
    j["uploaded"] = a->name().starts_with(kUserPrefix);
    out.push_back(std::move(j));
  }
  return {{"actions", out}};
}

json Workbench::optimizers_json() const {
  json out = json::array();
  for (const auto& p : optimizers_.list()) {
    json j = profile_to_json(p);
    j["uploaded"] = p.uploaded;
    out.push_back(std::move(j));
  }
  return {{"optimizers", out}};
}

json Workbench::diff_view(const std::string& query_id, const std::string& left, const std::string& right) {
  const OptimizeResult l = optimize(query_id, left);
  const OptimizeResult r = optimize(query_id, right);
  return {{"query", query_id},
          {"left", {{"optimizer", left}, {"plan", plan_to_document(*l.plan, true)}, {"plan_hash", hex64(l.plan->hash())}}},
          {"right", {{"optimizer", right}, {"plan", plan_to_document(*r.plan, true)}, {"plan_hash", hex64(r.plan->hash())}}},
          {"diff", plan_diff_to_json(diff_plans(l.plan, r.plan))}};
}

OptimizerProfile Workbench::upload_optimizer(const json& doc, bool replace) {
  OptimizerProfile p = optimizers_.upload(doc, actions_, replace);
  persist("optimizers", p.name, profile_to_json(p));
  return p;
}

ActionPtr Workbench::upload_action(const json& doc, bool replace) {
  ActionPtr a = actions_.upload(doc, replace);
  persist("actions", a->name(), action_document(*a));
  return a;
}

void Workbench::persist(const std::string& kind, const std::string& name, const json& doc) const {
  if (!config_.work_dir) return;
  const auto dir = *config_.work_dir / kind;
  std::filesystem::create_directories(dir);
  std::ofstream(dir / (file_stem_for(name) + ".json")) << doc.dump(2) << "\n";
}

void Workbench::load_uploads() {
  namespace fs = std::filesystem;
  // Actions first: uploaded optimizers may reference uploaded actions.
  for (const auto* kind : {"actions", "optimizers"}) {
    const auto dir = *config_.work_dir / kind;
    if (!fs::is_directory(dir)) continue;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const json doc = read_json_file(f);
      if (std::string(kind) == "actions") actions_.upload(doc, true);
      else optimizers_.upload(doc, actions_, true);
    }
  }
}

// ---- API ------------------------------------------------------------------

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownQuery:
    case ErrorCode::UnknownOptimizer:
    case ErrorCode::UnknownTable:
    case ErrorCode::UnknownModel:
      return 404;
    case ErrorCode::DuplicateName:
      return 409;
    case ErrorCode::ParseError:
    case ErrorCode::ValidationError:
    case ErrorCode::UnknownAction:
    case ErrorCode::UnknownStatistic:
    case ErrorCode::InvalidSpec:
    case ErrorCode::UnresolvedColumn:
    case ErrorCode::ArityMismatch:
    case ErrorCode::TypeMismatch:
    case ErrorCode::ShapeMismatch:
      return 400;
    default:
      return 500;
  }
}

json error_body(ErrorCode code, const std::string& message, const std::string& detail) {
  return {{"code", error_code_name(code)}, {"message", message}, {"detail", detail}};
}

std::string_view job_state_name(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
  }
  return "?";
}

struct Api::Job {
  std::string id;
  JobState state = JobState::Queued;
  std::vector<std::string> queries;
  std::vector<OptimizerProfile> optimizers;
  BenchConfig config;
  std::size_t done = 0;
  std::size_t total = 0;
  json report;
  json error;
};

Api::Api(Workbench& workbench) : wb_(workbench), worker_([this] { worker_loop(); }) {}

Api::~Api() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  worker_.join();
}

namespace {

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

json parse_body(const std::string& body) {
  if (body.empty()) fail(ErrorCode::ParseError, "request body is empty", "");
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, std::string("request body is not JSON: ") + e.what(), "byte " + std::to_string(e.byte));
  }
}

const std::string& required_param(const ApiRequest& r, const std::string& key) {
  auto it = r.params.find(key);
  if (it == r.params.end() || it->second.empty())
    fail(ErrorCode::ValidationError, "missing query parameter '" + key + "'", key);
  return it->second;
}

bool flag_param(const ApiRequest& r, const std::string& key) {
  auto it = r.params.find(key);
  return it != r.params.end() && (it->second == "true" || it->second == "1");
}

ApiResponse not_found(const ApiRequest& r) {
  return {404, error_body(ErrorCode::ValidationError, "no route for " + r.method + " " + r.path, r.path)};
}

}  // namespace

ApiResponse Api::handle(const ApiRequest& req) {
  try {
    const auto seg = split_path(req.path);
    const bool get = req.method == "GET", post = req.method == "POST";
    if (seg.empty()) return not_found(req);
    const std::string& head = seg[0];

    if (head == "health" && get && seg.size() == 1) return {200, {{"status", "ok"}}};
    if (head == "queries" && get) {
      if (seg.size() == 1) return {200, wb_.queries_json()};
      if (seg.size() == 3 && seg[2] == "plan") {
        auto it = req.params.find("optimizer");
        std::optional<std::string> opt;
        if (it != req.params.end() && !it->second.empty()) opt = it->second;
        suite_entry(seg[1]);  // 404 before any generation work
        return {200, wb_.plan_view(seg[1], opt)};
      }
    }
    if (head == "stats" && get && seg.size() == 2) {
      suite_entry(seg[1]);
      return {200, wb_.stats_view(seg[1])};
    }
    if (head == "actions" && seg.size() == 1) {
      if (get) return {200, wb_.actions_json()};
      if (post) {
        ActionPtr a = wb_.upload_action(parse_body(req.body), flag_param(req, "replace"));
        return {201, {{"action", action_to_json(*a)}}};
      }
    }
    if (head == "optimizers" && seg.size() == 1) {
      if (get) return {200, wb_.optimizers_json()};
      if (post) {
        OptimizerProfile p = wb_.upload_optimizer(parse_body(req.body), flag_param(req, "replace"));
        return {201, {{"optimizer", profile_to_json(p)}}};
      }
    }
    if (head == "bench") {
      if (post && seg.size() == 1) return submit_bench(req.body.empty() ? json::object() : parse_body(req.body));
      if (get && seg.size() == 2) return job_status(seg[1]);
    }
    if (head == "plans" && get && seg.size() == 2 && seg[1] == "diff") {
      const auto& q = required_param(req, "query");
      suite_entry(q);
      return {200, wb_.diff_view(q, required_param(req, "left"), required_param(req, "right"))};
    }
    return not_found(req);
  } catch (const Error& e) {
    return {http_status_for(e.code()), error_body(e.code(), e.message(), e.detail())};
  } catch (const std::exception& e) {
    return {500, error_body(ErrorCode::Internal, e.what(), "")};
  }
}

ApiResponse Api::submit_bench(const json& body) {
  if (!body.is_object()) fail(ErrorCode::ValidationError, "bench request must be an object", "");
  for (const auto& [k, _] : body.items())
    if (k != "queries" && k != "optimizers" && k != "repetitions" && k != "seed" && k != "scale")
      fail(ErrorCode::ValidationError, "unknown field '" + k + "'", "/" + k);
  auto job = std::make_shared<Job>();
  job->config.seed = body.value("seed", wb_.config().seed);
  job->config.scale = body.value("scale", wb_.config().scale);
  job->config.repetitions = body.value("repetitions", 5);
  job->config.stats = wb_.config().stats;
  job->config.exec = wb_.config().exec;
  if (job->config.repetitions < 1) fail(ErrorCode::ValidationError, "repetitions must be at least 1", "/repetitions");
  if (!(job->config.scale > 0.0)) fail(ErrorCode::ValidationError, "scale must be positive", "/scale");

  job->queries = body.contains("queries") ? body["queries"].get<std::vector<std::string>>() : suite_query_ids();
  for (std::size_t i = 0; i < job->queries.size(); ++i) {
    const auto& ids = suite_query_ids();
    if (std::find(ids.begin(), ids.end(), job->queries[i]) == ids.end())
      fail(ErrorCode::ValidationError, "unknown query '" + job->queries[i] + "'", "/queries/" + std::to_string(i));
  }
  const auto names = body.contains("optimizers") ? body["optimizers"].get<std::vector<std::string>>() : kDefaultBenchOptimizers;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!wb_.optimizers().contains(names[i]))
      fail(ErrorCode::ValidationError, "unknown optimizer '" + names[i] + "'", "/optimizers/" + std::to_string(i));
    job->optimizers.push_back(wb_.optimizers().get(names[i]));
  }
  {
    std::lock_guard lock(mu_);
    job->id = "job-" + std::to_string(next_job_++);
    jobs_[job->id] = job;
    queue_.push_back(job);
  }
  cv_.notify_all();
  return {202, {{"job_id", job->id}, {"status", "queued"}}};
}

ApiResponse Api::job_status(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return {404, error_body(ErrorCode::ValidationError, "unknown job '" + id + "'", id)};
  const Job& j = *it->second;
  return {200,
          {{"job_id", j.id},
           {"status", job_state_name(j.state)},
           {"progress", {{"done", j.done}, {"total", j.total}}},
           {"report", j.report.is_null() ? json(nullptr) : j.report},
           {"error", j.error.is_null() ? json(nullptr) : j.error}}};
}

json Api::wait_job(const std::string& id) {
  std::unique_lock lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) fail(ErrorCode::ValidationError, "unknown job '" + id + "'", id);
  auto job = it->second;
  cv_.wait(lock, [&] { return job->state == JobState::Done || job->state == JobState::Failed; });
  lock.unlock();
  return job_status(id).body;
}

void Api::worker_loop() {
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      job = queue_.front();
      queue_.erase(queue_.begin());
      job->state = JobState::Running;
      job->total = job->queries.size() * (job->optimizers.size() + 1);
    }
    json report, error;
    JobState end = JobState::Done;
    try {
      auto r = run_benchmark(job->queries, job->optimizers, wb_.actions(), job->config,
                             [&](const BenchRun&, std::size_t done, std::size_t total) {
                               std::lock_guard lock(mu_);
                               job->done = done;
                               job->total = total;
                             });
      report = report_to_json(r);
    } catch (const Error& e) {
      end = JobState::Failed;
      error = error_body(e.code(), e.message(), e.detail());
    } catch (const std::exception& e) {
      end = JobState::Failed;
      error = error_body(ErrorCode::Internal, e.what(), "");
    }
    {
      std::lock_guard lock(mu_);
      job->report = std::move(report);
      job->error = std::move(error);
      job->state = end;
    }
    cv_.notify_all();
  }
}

}  // namespace optbench
