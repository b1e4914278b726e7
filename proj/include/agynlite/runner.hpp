#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace agynlite::runner {

using EnvMap = std::map<std::string, std::string>;

struct ContainerLaunch {
    std::string name;
    std::string behavior;
    EnvMap env;
};

struct VolumeMount {
    // Runner-wide volume name; the volume outlives the workload.
    std::string volume;
    std::string mount_path;
};

struct WorkloadSpec {
    std::string workload_id;
    // The first container is the main (agent) container; the rest are sidecars.
    std::vector<ContainerLaunch> containers;
    // Attached to every container of the workload.
    std::vector<VolumeMount> volume_mounts;
    // Handed to the workload's network proxy only, never to a container env.
    std::string identity_token;
    // Delivered to the main container: thread_id, recent messages, prompt, model.
    nlohmann::json thread_context = nlohmann::json::object();
};

struct WorkloadInfo {
    std::string workload_id;
    std::vector<std::string> containers;
    std::vector<std::string> volumes;
};

struct ContainerRef {
    std::string workload_id;
    std::string container;
};

class Runner;

class WorkloadHandle {
public:
    WorkloadHandle(Runner& runner, std::string workload_id)
        : runner_(&runner), id_(std::move(workload_id)) {}

    const std::string& id() const { return id_; }
    bool live() const;
    void stop();
    EnvMap inspect_env(std::string_view container) const;
    void loopback_send(std::string_view from, std::string_view to, std::string message);

private:
    Runner* runner_;
    std::string id_;
};

// The seam between the orchestrator and whatever actually runs workloads.
// A cluster backend implements exactly these operations.
class Runner {
public:
    virtual ~Runner() = default;

    // Errors: VolumeBusy, UnknownBehavior.
    virtual WorkloadHandle create_workload(const WorkloadSpec& spec) = 0;
    // Returns once every container has terminated. Errors: UnknownWorkload.
    virtual void stop_workload(std::string_view workload_id) = 0;
    // Errors: RunnerUnavailable.
    virtual std::vector<WorkloadInfo> list_workloads() const = 0;
    // Errors: CrossWorkload, UnknownWorkload, UnknownContainer.
    virtual void loopback_send(const ContainerRef& from, const ContainerRef& to,
                               std::string message) = 0;
    virtual EnvMap inspect_env(std::string_view workload_id, std::string_view container) const = 0;
    // Thread-context channel: hands an inbound thread message to the main container.
    virtual void deliver(std::string_view workload_id, const nlohmann::json& message) = 0;

    void loopback_send(std::string_view workload_id, std::string_view from, std::string_view to,
                       std::string message) {
        loopback_send(ContainerRef{std::string(workload_id), std::string(from)},
                      ContainerRef{std::string(workload_id), std::string(to)}, std::move(message));
    }
};

} // namespace agynlite::runner
