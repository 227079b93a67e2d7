#pragma once

#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "optbench/bench.hpp"
#include "optbench/optimizer.hpp"
#include "optbench/query_suite.hpp"

namespace optbench {

struct WorkbenchConfig {
  std::uint64_t seed = 7;
  double scale = 1.0;
  StatsConfig stats;
  ExecConfig exec;
  /// When set, uploaded optimizer and action documents are persisted under
  /// <work_dir>/optimizers and <work_dir>/actions and reloaded on startup.
  std::optional<std::filesystem::path> work_dir;
};

/// Registries plus lazily generated per-query data, shared by the CLI, the
/// HTTP service and the Python module.
class Workbench {
 public:
  explicit Workbench(WorkbenchConfig config = {});

  const WorkbenchConfig& config() const { return config_; }
  ActionRegistry& actions() { return actions_; }
  const ActionRegistry& actions() const { return actions_; }
  OptimizerRegistry& optimizers() { return optimizers_; }
  const OptimizerRegistry& optimizers() const { return optimizers_; }

  struct QueryState {
    QueryData data;
    PlanPtr plan;
    std::unique_ptr<StatsCollector> stats;  // guarded internally
  };
  /// Generated on first use with the configured seed and scale.
  QueryState& query(const std::string& id);

  OptimizeResult optimize(const std::string& query_id, const std::string& optimizer);

  nlohmann::json queries_json() const;
  /// Plan document with node paths and schemas, per-node statistics of the
  /// plan and, with an optimizer, its decision trace.
  nlohmann::json plan_view(const std::string& query_id, const std::optional<std::string>& optimizer);
  nlohmann::json stats_view(const std::string& query_id);
  nlohmann::json actions_json() const;
  nlohmann::json optimizers_json() const;
  nlohmann::json diff_view(const std::string& query_id, const std::string& left, const std::string& right);

  OptimizerProfile upload_optimizer(const nlohmann::json& doc, bool replace = false);
  ActionPtr upload_action(const nlohmann::json& doc, bool replace = false);

 private:
  void persist(const std::string& kind, const std::string& name, const nlohmann::json& doc) const;
  void load_uploads();

  WorkbenchConfig config_;
  ActionRegistry actions_;
  OptimizerRegistry optimizers_;
  std::mutex queries_mu_;
  std::map<std::string, std::unique_ptr<QueryState>> queries_;
};

// ---- transport-independent request routing ---------------------------------

struct ApiRequest {
  std::string method;  // GET | POST
  std::string path;    // without query string
  std::map<std::string, std::string> params;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// HTTP status class for a library error: validation 400, unknown entity 404,
/// duplicate 409, everything else 500.
int http_status_for(ErrorCode code);
nlohmann::json error_body(ErrorCode code, const std::string& message, const std::string& detail);

enum class JobState { Queued, Running, Done, Failed };
std::string_view job_state_name(JobState s);

/// Routes every endpoint. Benchmark jobs run one at a time on a worker thread.
class Api {
 public:
  explicit Api(Workbench& workbench);
  ~Api();
  Api(const Api&) = delete;
  Api& operator=(const Api&) = delete;

  ApiResponse handle(const ApiRequest& req);

  /// Blocks until the job leaves the queued/running states (for tests and the CLI).
  nlohmann::json wait_job(const std::string& id);

 private:
  struct Job;
  ApiResponse submit_bench(const nlohmann::json& body);
  ApiResponse job_status(const std::string& id);
  void worker_loop();

  Workbench& wb_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::vector<std::shared_ptr<Job>> queue_;
  std::uint64_t next_job_ = 1;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace optbench
