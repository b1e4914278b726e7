#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "agynlite/clock.hpp"
#include "agynlite/events.hpp"
#include "agynlite/identity.hpp"
#include "agynlite/registry.hpp"
#include "agynlite/runner.hpp"
#include "agynlite/store.hpp"
#include "agynlite/threads.hpp"

namespace agynlite::orchestrator {

enum class InstanceState { Provisioning, Running, Stopping, Stopped, Failed };

std::string_view to_string(InstanceState s);
std::optional<InstanceState> state_from_string(std::string_view s);
// Provisioning, Running and Stopping.
bool is_live(InstanceState s);
bool transition_allowed(InstanceState from, InstanceState to);

struct Instance {
    std::string instance_id;
    std::string agent_id;
    std::string thread_id;
    std::uint64_t definition_revision = 0;
    InstanceState state = InstanceState::Provisioning;
    std::string identity_id;
    std::string workload_id;
    Millis last_active_ts{0};
    Millis created_ts{0};
    // When the current state was entered.
    Millis state_ts{0};
    Millis idle_timeout{std::chrono::seconds(registry::kDefaultIdleTimeoutS)};
    std::string error;
};

nlohmann::json to_json(const Instance& i);

struct ReconcileOutcome {
    // Event already processed.
    bool noop = false;
    // The serving agent's own reply; nothing to do.
    bool ignored = false;
    bool spawned = false;
    bool forwarded = false;
    bool queued = false;
    std::string instance_id;
    std::vector<std::string> actions;
};

struct CorrectiveAction {
    // stop_orphan, complete_stop, promote, fail_instance, delete_identity, drop_index
    std::string kind;
    std::string target;

    friend bool operator==(const CorrectiveAction&, const CorrectiveAction&) = default;
};

struct SweepFailure {
    std::string instance_id;
    std::string error;
};

struct OrchestratorOptions {
    std::size_t processed_retention = 10'000;
    // Recent messages included in the spawn-time thread context.
    std::size_t context_messages = 20;
};

enum class SpawnStep { Claimed, HarnessResolved, IdentityMinted, WorkloadCreated };

// Thrown from a fault hook to emulate the process dying mid-spawn: it skips
// rollback and leaves whatever was already written behind.
struct SimulatedCrash : std::exception {
    const char* what() const noexcept override { return "simulated crash"; }
};

using FaultHook = std::function<void(SpawnStep, const Instance&)>;

// Drives the per-(agent, thread) instance lifecycle.
//
// Spawn order is secrets -> identity -> workload; a failure rolls back in
// reverse. At most one instance per (agent, thread) is live, enforced by a
// compare-and-set on "live/<agent>/<thread>". Work on one thread is
// serialized; different threads proceed independently.
class Orchestrator {
public:
    Orchestrator(store::Store& store, events::Bus& bus, registry::Registry& registry,
                 threads::ThreadStore& threads, identity::IdentityProvider& identities,
                 runner::Runner& runner, OrchestratorOptions options = {});

    // Errors: SpawnFailed (instance left Failed, error published), NotFound.
    ReconcileOutcome handle_message_event(const events::Event& event, Millis now);
    // Errors: UnknownInstance, WrongState.
    void record_keepalive(std::string_view instance_id, Millis now);
    std::vector<std::string> sweep_idle(Millis now);
    std::vector<CorrectiveAction> recover(const std::vector<runner::WorkloadInfo>& live_workloads,
                                          Millis now);
    // Lists workloads from the runner first. Errors: RunnerUnavailable.
    std::vector<CorrectiveAction> recover(Millis now);

    std::optional<Instance> find_instance(std::string_view instance_id) const;
    std::optional<Instance> live_instance(std::string_view agent_id,
                                          std::string_view thread_id) const;
    std::vector<Instance> instances() const;
    std::vector<SweepFailure> last_sweep_failures() const;

    void set_fault_hook(FaultHook hook) { fault_hook_ = std::move(hook); }

private:
    std::shared_ptr<std::mutex> thread_lock(const std::string& thread_id);
    bool processed(const std::string& event_id) const;
    void mark_processed(const std::string& event_id);

    void spawn(const threads::Thread& thread, const nlohmann::json& message, Millis now,
               ReconcileOutcome& out);
    void flush_pending(const std::string& instance_id, const std::string& workload_id);
    bool stop_instance(const std::string& instance_id, Millis now, std::string* error);
    void fail_instance(const std::string& instance_id, const std::string& reason, Millis now);

    // Table helpers; callers must not hold table_mutex_.
    void set_state(const std::string& instance_id, InstanceState to, Millis now);
    void update(const std::string& instance_id, const std::function<void(Instance&)>& fn);
    void persist_locked(const Instance& i);
    void publish_state(const Instance& i);
    void drop_live_index(const Instance& i);

    store::Store& store_;
    events::Bus& bus_;
    registry::Registry& registry_;
    threads::ThreadStore& threads_;
    identity::IdentityProvider& identities_;
    runner::Runner& runner_;
    OrchestratorOptions options_;
    FaultHook fault_hook_;

    mutable std::mutex table_mutex_;
    std::map<std::string, Instance> instances_;
    std::map<std::string, std::deque<nlohmann::json>> pending_;
    std::vector<SweepFailure> sweep_failures_;

    std::mutex locks_mutex_;
    std::map<std::string, std::shared_ptr<std::mutex>> thread_locks_;

    mutable std::mutex processed_mutex_;
    std::set<std::string> processed_;
    std::deque<std::string> processed_order_;
    std::uint64_t processed_counter_ = 0;
};

struct LoopOptions {
    // 0 disables the background sweeper.
    Millis sweep_period{std::chrono::seconds(30)};
    std::size_t workers = 4;
    std::string group = "orchestrator";
};

// Sweep cadence: idle_timeout / 10, never below one second.
Millis default_sweep_period(Millis idle_timeout);

// Background driver: consumes thread.message, hands each event to a worker
// chosen by thread id (so one thread's events stay ordered), acks after
// handling, and sweeps idle instances on a fixed period.
class OrchestratorLoop {
public:
    OrchestratorLoop(Orchestrator& orchestrator, events::Bus& bus, const Clock& clock,
                     LoopOptions options = {});
    ~OrchestratorLoop();

    void start();
    void stop();

private:
    struct Worker {
        std::mutex mutex;
        std::condition_variable cv;
        std::deque<events::Event> queue;
        std::thread thread;
    };

    void consume();
    void work(Worker& w, events::Subscription& sub);
    void sweep();

    Orchestrator& orchestrator_;
    events::Bus& bus_;
    const Clock& clock_;
    LoopOptions options_;
    std::atomic<bool> running_{false};
    std::optional<events::Subscription> subscription_;
    std::vector<std::unique_ptr<Worker>> workers_;
    std::thread consumer_;
    std::thread sweeper_;
    std::mutex sweep_mutex_;
    std::condition_variable sweep_cv_;
};

} // namespace agynlite::orchestrator
