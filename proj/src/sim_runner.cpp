#include "agynlite/sim_runner.hpp"

#include <algorithm>

#include "agynlite/error.hpp"

namespace agynlite::runner {

struct SimContainer {
    std::string name;
    bool main = false;
    EnvMap env;
    std::filesystem::path scratch;
    std::unique_ptr<Behavior> behavior;

    std::mutex inbox_mutex;
    std::condition_variable inbox_cv;
    std::deque<Envelope> inbox;

    std::thread thread;
};

struct SimWorkload {
    std::string id;
    std::vector<std::unique_ptr<SimContainer>> containers;
    std::map<std::string, std::filesystem::path> mounts;
    std::vector<std::string> volumes;
    std::shared_ptr<ApiTransport> proxy;
    nlohmann::json thread_context;
    std::filesystem::path root;
    std::atomic<bool> stopping{false};
    std::atomic<bool> attached{true};

    SimContainer* container(std::string_view name) {
        for (auto& c : containers) {
            if (c->name == name) {
                return c.get();
            }
        }
        return nullptr;
    }

    void push(SimContainer& c, Envelope e) {
        {
            std::lock_guard lock(c.inbox_mutex);
            c.inbox.push_back(std::move(e));
        }
        c.inbox_cv.notify_all();
    }
};

namespace {
const nlohmann::json kEmptyContext = nlohmann::json::object();
}

bool WorkloadHandle::live() const {
    for (const auto& w : runner_->list_workloads()) {
        if (w.workload_id == id_) {
            return true;
        }
    }
    return false;
}

void WorkloadHandle::stop() { runner_->stop_workload(id_); }

EnvMap WorkloadHandle::inspect_env(std::string_view container) const {
    return runner_->inspect_env(id_, container);
}

void WorkloadHandle::loopback_send(std::string_view from, std::string_view to,
                                   std::string message) {
    runner_->loopback_send(id_, from, to, std::move(message));
}

std::unique_ptr<Behavior> BehaviorCatalog::make(std::string_view id) const {
    auto it = factories_.find(std::string(id));
    if (it == factories_.end()) {
        fail(Errc::UnknownBehavior, "unknown behavior '" + std::string(id) + "'");
    }
    return it->second();
}

ContainerContext::ContainerContext(SimRunner& runner, SimWorkload& workload,
                                   SimContainer& container)
    : runner_(&runner), workload_(&workload), container_(&container) {}

const std::string& ContainerContext::name() const { return container_->name; }
const std::string& ContainerContext::workload_id() const { return workload_->id; }
bool ContainerContext::is_main() const { return container_->main; }
const EnvMap& ContainerContext::env() const { return container_->env; }

const nlohmann::json& ContainerContext::thread_context() const {
    return container_->main ? workload_->thread_context : kEmptyContext;
}

const std::filesystem::path& ContainerContext::scratch_dir() const { return container_->scratch; }

std::vector<std::string> ContainerContext::mount_paths() const {
    std::vector<std::string> out;
    for (const auto& [path, _] : workload_->mounts) {
        out.push_back(path);
    }
    return out;
}

std::filesystem::path ContainerContext::resolve_mount(std::string_view mount_path) const {
    if (!workload_->attached) {
        fail(Errc::UnknownWorkload, "volumes of " + workload_->id + " are detached");
    }
    auto it = workload_->mounts.find(std::string(mount_path));
    if (it == workload_->mounts.end()) {
        fail(Errc::NotFound, "nothing mounted at " + std::string(mount_path));
    }
    return it->second;
}

std::vector<std::string> ContainerContext::peers() const {
    std::vector<std::string> out;
    for (const auto& c : workload_->containers) {
        if (c.get() != container_) {
            out.push_back(c->name);
        }
    }
    return out;
}

std::optional<Envelope> ContainerContext::receive(std::chrono::milliseconds wait) {
    std::unique_lock lock(container_->inbox_mutex);
    container_->inbox_cv.wait_for(lock, wait, [&] {
        return !container_->inbox.empty() || workload_->stopping.load();
    });
    if (container_->inbox.empty()) {
        return std::nullopt;
    }
    auto e = std::move(container_->inbox.front());
    container_->inbox.pop_front();
    return e;
}

void ContainerContext::send_loopback(std::string_view to, std::string payload) {
    runner_->loopback_send(ContainerRef{workload_->id, container_->name},
                           ContainerRef{workload_->id, std::string(to)}, std::move(payload));
}

HttpResponse ContainerContext::call(const HttpRequest& request) {
    if (!workload_->proxy) {
        return HttpResponse{503, "application/json", R"({"code":"unavailable"})", {}};
    }
    return workload_->proxy->call(request);
}

bool ContainerContext::stopping() const { return workload_->stopping.load(); }

SimRunner::SimRunner(std::filesystem::path data_root, BehaviorCatalog catalog,
                     ProxyFactory proxies)
    : data_root_(std::move(data_root)), catalog_(std::move(catalog)), proxies_(std::move(proxies)) {
    std::filesystem::create_directories(data_root_ / "volumes");
    std::filesystem::create_directories(data_root_ / "workloads");
}

SimRunner::~SimRunner() { stop_all(); }

std::shared_ptr<SimWorkload> SimRunner::find(std::string_view workload_id) const {
    auto it = workloads_.find(workload_id);
    if (it == workloads_.end()) {
        fail(Errc::UnknownWorkload, "unknown workload '" + std::string(workload_id) + "'");
    }
    return it->second;
}

WorkloadHandle SimRunner::create_workload(const WorkloadSpec& spec) {
    if (spec.containers.empty()) {
        fail(Errc::InvalidArgument, "workload needs at least one container");
    }
    auto w = std::make_shared<SimWorkload>();
    w->id = spec.workload_id;
    w->thread_context = spec.thread_context;
    w->root = data_root_ / "workloads" / spec.workload_id;
    bool first = true;
    for (const auto& c : spec.containers) {
        auto sc = std::make_unique<SimContainer>();
        sc->name = c.name;
        sc->main = first;
        sc->env = c.env;
        sc->scratch = w->root / c.name;
        sc->behavior = catalog_.make(c.behavior);
        w->containers.push_back(std::move(sc));
        first = false;
    }

    {
        std::lock_guard lock(mutex_);
        if (workloads_.count(spec.workload_id) != 0) {
            fail(Errc::InvalidArgument, "workload '" + spec.workload_id + "' already exists");
        }
        for (const auto& c : spec.containers) {
            if (!catalog_.contains(c.behavior)) {
                fail(Errc::UnknownBehavior, "unknown behavior '" + c.behavior + "'");
            }
        }
        for (const auto& m : spec.volume_mounts) {
            auto it = volumes_.find(m.volume);
            if (it != volumes_.end() && !it->second.attached_workload.empty()) {
                fail(Errc::VolumeBusy, "volume '" + m.volume + "' is attached to " +
                                           it->second.attached_workload);
            }
        }
        for (const auto& m : spec.volume_mounts) {
            auto& v = volumes_[m.volume];
            if (v.dir.empty()) {
                v.dir = data_root_ / "volumes" / m.volume;
                std::filesystem::create_directories(v.dir);
            }
            v.attached_workload = w->id;
            w->mounts[m.mount_path] = v.dir;
            w->volumes.push_back(m.volume);
        }
        workloads_.emplace(w->id, w);
    }

    w->proxy = proxies_ ? proxies_(spec.identity_token) : nullptr;
    for (auto& c : w->containers) {
        std::filesystem::create_directories(c->scratch);
    }
    for (auto& c : w->containers) {
        SimContainer* raw = c.get();
        raw->thread = std::thread([this, w, raw] {
            ContainerContext ctx(*this, *w, *raw);
            try {
                raw->behavior->run(ctx);
            } catch (const std::exception&) {
                // A crashing container just exits; the workload stays up.
            }
        });
    }
    return WorkloadHandle(*this, w->id);
}

void SimRunner::stop_workload(std::string_view workload_id) {
    std::shared_ptr<SimWorkload> w;
    {
        std::lock_guard lock(mutex_);
        w = find(workload_id);
        workloads_.erase(w->id);
    }
    w->stopping = true;
    for (auto& c : w->containers) {
        c->inbox_cv.notify_all();
    }
    for (auto& c : w->containers) {
        if (c->thread.joinable()) {
            c->thread.join();
        }
    }
    w->attached = false;
    {
        std::lock_guard lock(mutex_);
        for (const auto& v : w->volumes) {
            auto it = volumes_.find(v);
            if (it != volumes_.end() && it->second.attached_workload == w->id) {
                it->second.attached_workload.clear();
            }
        }
    }
    std::error_code ec;
    std::filesystem::remove_all(w->root, ec);
}

std::vector<WorkloadInfo> SimRunner::list_workloads() const {
    if (!available_) {
        fail(Errc::RunnerUnavailable, "runner is unavailable");
    }
    std::lock_guard lock(mutex_);
    std::vector<WorkloadInfo> out;
    for (const auto& [id, w] : workloads_) {
        WorkloadInfo info{id, {}, w->volumes};
        for (const auto& c : w->containers) {
            info.containers.push_back(c->name);
        }
        out.push_back(std::move(info));
    }
    return out;
}

void SimRunner::loopback_send(const ContainerRef& from, const ContainerRef& to,
                              std::string message) {
    std::shared_ptr<SimWorkload> w;
    {
        std::lock_guard lock(mutex_);
        if (from.workload_id != to.workload_id) {
            fail(Errc::CrossWorkload, "loopback cannot cross from " + from.workload_id + " to " +
                                          to.workload_id);
        }
        w = find(from.workload_id);
    }
    if (w->container(from.container) == nullptr) {
        fail(Errc::UnknownContainer, "unknown container '" + from.container + "'");
    }
    auto* target = w->container(to.container);
    if (target == nullptr) {
        fail(Errc::UnknownContainer, "unknown container '" + to.container + "'");
    }
    Envelope e;
    e.kind = Envelope::Kind::Loopback;
    e.from = from.container;
    e.payload = std::move(message);
    w->push(*target, std::move(e));
}

EnvMap SimRunner::inspect_env(std::string_view workload_id, std::string_view container) const {
    std::shared_ptr<SimWorkload> w;
    {
        std::lock_guard lock(mutex_);
        w = find(workload_id);
    }
    auto* c = w->container(container);
    if (c == nullptr) {
        fail(Errc::UnknownContainer, "unknown container '" + std::string(container) + "'");
    }
    return c->env;
}

void SimRunner::deliver(std::string_view workload_id, const nlohmann::json& message) {
    std::shared_ptr<SimWorkload> w;
    {
        std::lock_guard lock(mutex_);
        w = find(workload_id);
    }
    Envelope e;
    e.kind = Envelope::Kind::ThreadMessage;
    e.message = message;
    w->push(*w->containers.front(), std::move(e));
}

std::filesystem::path SimRunner::volume_dir(std::string_view volume) const {
    return data_root_ / "volumes" / std::string(volume);
}

std::optional<std::string> SimRunner::volume_attachment(std::string_view volume) const {
    std::lock_guard lock(mutex_);
    auto it = volumes_.find(volume);
    if (it == volumes_.end() || it->second.attached_workload.empty()) {
        return std::nullopt;
    }
    return it->second.attached_workload;
}

void SimRunner::stop_all() {
    std::vector<std::string> ids;
    {
        std::lock_guard lock(mutex_);
        for (const auto& [id, _] : workloads_) {
            ids.push_back(id);
        }
    }
    for (const auto& id : ids) {
        try {
            stop_workload(id);
        } catch (const Error&) {
        }
    }
}

} // namespace agynlite::runner
