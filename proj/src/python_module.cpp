#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "agynlite/authz.hpp"
#include "agynlite/configctl.hpp"
#include "agynlite/error.hpp"
#include "agynlite/platform.hpp"

namespace py = pybind11;
using namespace agynlite;
using nlohmann::json;

namespace {

// A platform plus an optional HTTP listener, owned by one Python object.
class LocalPlatform {
public:
    LocalPlatform(const std::string& data_dir, const std::string& users_json, bool durable,
                  const std::string& master_key_hex, const std::string& provisioning_token,
                  long sweep_period_ms) {
        PlatformOptions o;
        o.data_dir = data_dir;
        o.durable = durable;
        if (master_key_hex.empty()) {
            o.master_key = crypto::random_key();
        } else if (auto k = crypto::parse_key(master_key_hex)) {
            o.master_key = *k;
        } else {
            fail(Errc::InvalidArgument, "master key must be 64 hex characters");
        }
        o.provisioning_token = provisioning_token;
        o.users = gateway::users_from_json(json::parse(users_json));
        o.loop.sweep_period =
            sweep_period_ms > 0
                ? Millis{sweep_period_ms}
                : orchestrator::default_sweep_period(std::chrono::seconds(registry::kDefaultIdleTimeoutS));
        platform_ = std::make_unique<Platform>(std::move(o));
    }

    ~LocalPlatform() { stop(); }

    void start() { platform_->start(); }

    std::string serve(const std::string& host, int port) {
        if (!server_) {
            server_ = std::make_unique<gateway::HttpServer>(platform_->gateway(), host, port);
            server_->start();
        }
        return server_->base_url();
    }

    void stop() {
        if (server_) {
            server_->stop();
            server_.reset();
        }
        if (platform_) {
            platform_->stop();
        }
    }

    // Returns (status, body text). Streaming routes are not available here.
    std::pair<int, std::string> call(const std::string& token, const std::string& method,
                                     const std::string& path, const std::string& body) {
        HttpRequest req;
        req.method = method;
        req.path = path;
        req.body = body;
        if (!token.empty()) {
            req.set_header("authorization", "Bearer " + token);
        }
        auto res = platform_->gateway().handle(req);
        if (res.stream) {
            return {400, R"({"code":"InvalidArgument","message":"use serve() for event streams"})"};
        }
        return {res.status, res.body};
    }

    std::string instances() const {
        json out = json::array();
        for (const auto& i : platform_->orchestrator().instances()) {
            out.push_back(orchestrator::to_json(i));
        }
        return out.dump();
    }

private:
    std::unique_ptr<Platform> platform_;
    std::unique_ptr<gateway::HttpServer> server_;
};

bool check(const std::vector<std::string>& tuples, const std::string& object,
           const std::string& permission, const std::string& subject, int depth_limit) {
    authz::TupleSet ts;
    for (const auto& t : tuples) {
        ts.add(authz::RelationTuple::parse(t));
    }
    return authz::check(ts, object, permission, subject, depth_limit);
}

std::string parse_definitions(const std::vector<std::pair<std::string, std::string>>& files) {
    std::vector<configctl::SourceFile> sources;
    for (const auto& [name, text] : files) {
        sources.push_back({name, text});
    }
    auto state = configctl::parse(sources);
    json agents = json::object();
    for (const auto& [id, def] : state.agents) {
        agents[id] = registry::to_json(def, false);
    }
    json secrets = json::array();
    for (const auto& [name, s] : state.secrets) {
        secrets.push_back(json{{"name", name}, {"owner_agent", s.owner_agent}});
    }
    return json{{"agents", agents}, {"secrets", secrets}}.dump();
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "agynlite control plane bindings";

    static py::exception<Error> error(m, "Error");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) {
                std::rethrow_exception(p);
            }
        } catch (const Error& e) {
            PyErr_SetString(error.ptr(), (std::string(errc_name(e.code())) + ": " + e.what()).c_str());
        }
    });

    py::class_<LocalPlatform>(m, "LocalPlatform")
        .def(py::init<const std::string&, const std::string&, bool, const std::string&,
                      const std::string&, long>(),
             py::arg("data_dir"), py::arg("users_json"), py::arg("durable") = false,
             py::arg("master_key_hex") = "", py::arg("provisioning_token") = "",
             py::arg("sweep_period_ms") = 0)
        .def("start", &LocalPlatform::start, py::call_guard<py::gil_scoped_release>())
        .def("serve", &LocalPlatform::serve, py::arg("host") = "127.0.0.1", py::arg("port") = 0,
             py::call_guard<py::gil_scoped_release>())
        .def("stop", &LocalPlatform::stop, py::call_guard<py::gil_scoped_release>())
        .def("call", &LocalPlatform::call, py::arg("token"), py::arg("method"), py::arg("path"),
             py::arg("body") = "", py::call_guard<py::gil_scoped_release>())
        .def("instances", &LocalPlatform::instances);

    m.def("check", &check, py::arg("tuples"), py::arg("object"), py::arg("permission"),
          py::arg("subject"), py::arg("depth_limit") = authz::kDefaultDepthLimit);
    m.def("parse_definitions", &parse_definitions, py::arg("files"));
}
