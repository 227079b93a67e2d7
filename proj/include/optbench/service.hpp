#pragma once

#include <memory>
#include <optional>
#include <string>

#include "optbench/workbench.hpp"

namespace optbench {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
};

/// --port wins, then $OPTBENCH_PORT, then 8080. Throws ValidationError on a bad value.
int resolve_port(std::optional<int> cli_port);

/// HTTP+JSON front of an Api. Starts listening on construction of the
/// background thread in start(); stop() or destruction shuts it down.
class Service {
 public:
  Service(Workbench& workbench, ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();
  int port() const { return bound_port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int bound_port_ = 0;
};

}  // namespace optbench
