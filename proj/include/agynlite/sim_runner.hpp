#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "agynlite/http.hpp"
#include "agynlite/runner.hpp"

namespace agynlite::runner {

struct Envelope {
    enum class Kind { ThreadMessage, Loopback };
    Kind kind = Kind::ThreadMessage;
    nlohmann::json message;   // ThreadMessage
    std::string from;         // Loopback sender container
    std::string payload;      // Loopback bytes
};

class SimRunner;
struct SimWorkload;
struct SimContainer;

// What a simulated container can see: its own env and scratch directory,
// the workload's mounted volumes, the loopback channel and the network proxy.
class ContainerContext {
public:
    ContainerContext(SimRunner& runner, SimWorkload& workload, SimContainer& container);

    const std::string& name() const;
    const std::string& workload_id() const;
    bool is_main() const;
    const EnvMap& env() const;
    // Empty object for sidecars.
    const nlohmann::json& thread_context() const;
    const std::filesystem::path& scratch_dir() const;
    std::vector<std::string> mount_paths() const;
    // Backing directory of a mount; throws UnknownWorkload once detached.
    std::filesystem::path resolve_mount(std::string_view mount_path) const;
    std::vector<std::string> peers() const;

    std::optional<Envelope> receive(std::chrono::milliseconds wait);
    void send_loopback(std::string_view to, std::string payload);
    // Outbound platform call; the proxy attaches the workload identity.
    HttpResponse call(const HttpRequest& request);
    bool stopping() const;

private:
    SimRunner* runner_;
    SimWorkload* workload_;
    SimContainer* container_;
};

class Behavior {
public:
    virtual ~Behavior() = default;
    // Returns when ctx.stopping() turns true.
    virtual void run(ContainerContext& ctx) = 0;
};

class BehaviorCatalog {
public:
    using Factory = std::function<std::unique_ptr<Behavior>()>;

    void add(std::string id, Factory factory) { factories_[std::move(id)] = std::move(factory); }
    bool contains(std::string_view id) const { return factories_.count(std::string(id)) != 0; }
    std::unique_ptr<Behavior> make(std::string_view id) const;

    // echo-agent, dialer-agent, mock-mcp
    static BehaviorCatalog builtin();

private:
    std::map<std::string, Factory> factories_;
};

// Builds the network proxy for a workload from its identity token.
using ProxyFactory = std::function<std::shared_ptr<ApiTransport>(const std::string& token)>;

// In-process runner: every container is its own thread with a private env
// map and scratch directory under <data_root>/workloads/<id>/<container>.
// Volumes are directories under <data_root>/volumes/<name>.
class SimRunner final : public Runner {
public:
    SimRunner(std::filesystem::path data_root, BehaviorCatalog catalog, ProxyFactory proxies);
    ~SimRunner() override;

    WorkloadHandle create_workload(const WorkloadSpec& spec) override;
    void stop_workload(std::string_view workload_id) override;
    std::vector<WorkloadInfo> list_workloads() const override;
    void loopback_send(const ContainerRef& from, const ContainerRef& to,
                       std::string message) override;
    EnvMap inspect_env(std::string_view workload_id, std::string_view container) const override;
    void deliver(std::string_view workload_id, const nlohmann::json& message) override;
    using Runner::loopback_send;

    std::filesystem::path volume_dir(std::string_view volume) const;
    std::optional<std::string> volume_attachment(std::string_view volume) const;
    // Simulates losing the runner control plane (list_workloads fails).
    void set_available(bool available) { available_ = available; }
    void stop_all();

private:
    friend class ContainerContext;

    struct VolumeState {
        std::filesystem::path dir;
        std::string attached_workload;
    };

    std::shared_ptr<SimWorkload> find(std::string_view workload_id) const;

    std::filesystem::path data_root_;
    BehaviorCatalog catalog_;
    ProxyFactory proxies_;
    std::atomic<bool> available_{true};

    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<SimWorkload>, std::less<>> workloads_;
    std::map<std::string, VolumeState, std::less<>> volumes_;
};

} // namespace agynlite::runner
