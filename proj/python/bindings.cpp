#include <memory>
#include <optional>
#include <string>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "optbench/query_suite.hpp"
#include "optbench/workbench.hpp"

namespace py = pybind11;

namespace {

// A workbench with its request router; JSON crosses the boundary as text.
class Session {
 public:
  Session(std::uint64_t seed, double scale, std::optional<std::filesystem::path> work_dir)
      : wb_(std::make_unique<optbench::Workbench>(make_config(seed, scale, std::move(work_dir)))),
        api_(std::make_unique<optbench::Api>(*wb_)) {}

  std::pair<int, std::string> request(std::string method, std::string path, std::map<std::string, std::string> params,
                                      std::string body) {
    optbench::ApiResponse r;
    {
      py::gil_scoped_release unlocked;
      r = api_->handle({std::move(method), std::move(path), std::move(params), std::move(body)});
    }
    return {r.status, r.body.dump()};
  }

  std::string wait_job(const std::string& id) {
    py::gil_scoped_release unlocked;
    return api_->wait_job(id).dump();
  }

 private:
  static optbench::WorkbenchConfig make_config(std::uint64_t seed, double scale, std::optional<std::filesystem::path> dir) {
    optbench::WorkbenchConfig c;
    c.seed = seed;
    c.scale = scale;
    c.work_dir = std::move(dir);
    return c;
  }

  std::unique_ptr<optbench::Workbench> wb_;
  std::unique_ptr<optbench::Api> api_;  // declared after wb_, destroyed first
};

}  // namespace

PYBIND11_MODULE(_optbench, m) {
  m.doc() = "optbench core bindings";
  py::class_<Session>(m, "Session")
      .def(py::init<std::uint64_t, double, std::optional<std::filesystem::path>>(), py::arg("seed") = 7,
           py::arg("scale") = 1.0, py::arg("work_dir") = std::nullopt)
      .def("request", &Session::request, py::arg("method"), py::arg("path"),
           py::arg("params") = std::map<std::string, std::string>{}, py::arg("body") = "")
      .def("wait_job", &Session::wait_job, py::arg("job_id"));
  m.def("suite_query_ids", [] { return optbench::suite_query_ids(); });
  m.def("suite_dir", [] { return optbench::suite_dir(); });
}
