#include "optbench/service.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>

namespace optbench {

int resolve_port(std::optional<int> cli_port) {
  int port = 8080;
  if (cli_port) {
    port = *cli_port;
  } else if (const char* env = std::getenv("OPTBENCH_PORT"); env && *env) {
    try {
      std::size_t used = 0;
      port = std::stoi(env, &used);
      if (used != std::string_view(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      fail(ErrorCode::ValidationError, "OPTBENCH_PORT is not a port number", env);
    }
  }
  if (port < 0 || port > 65535) fail(ErrorCode::ValidationError, "port out of range", std::to_string(port));
  return port;
}

struct Service::Impl {
  Impl(Workbench& wb, ServiceConfig c) : api(wb), config(std::move(c)) {}

  Api api;
  ServiceConfig config;
  httplib::Server server;
  std::thread thread;

  void route(const httplib::Request& req, httplib::Response& res) {
    ApiRequest r{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) r.params[k] = v;
    const ApiResponse out = api.handle(r);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  }
};

Service::Service(Workbench& workbench, ServiceConfig config) : impl_(std::make_unique<Impl>(workbench, std::move(config))) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) { impl_->route(req, res); };
  impl_->server.Get(R"(/.*)", handler);
  impl_->server.Post(R"(/.*)", handler);
}

Service::~Service() { stop(); }

int Service::start() {
  auto& s = impl_->server;
  if (impl_->config.port == 0) bound_port_ = s.bind_to_any_port(impl_->config.host);
  else bound_port_ = s.bind_to_port(impl_->config.host, impl_->config.port) ? impl_->config.port : -1;
  if (bound_port_ < 0)
    fail(ErrorCode::IoError, "cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
  impl_->thread = std::thread([&s] { s.listen_after_bind(); });
  s.wait_until_ready();
  return bound_port_;
}

void Service::run() {
  start();
  impl_->thread.join();
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace optbench
