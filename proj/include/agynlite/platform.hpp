#pragma once

#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "agynlite/authz.hpp"
#include "agynlite/clock.hpp"
#include "agynlite/crypto.hpp"
#include "agynlite/events.hpp"
#include "agynlite/gateway.hpp"
#include "agynlite/identity.hpp"
#include "agynlite/orchestrator.hpp"
#include "agynlite/registry.hpp"
#include "agynlite/sim_runner.hpp"
#include "agynlite/store.hpp"
#include "agynlite/threads.hpp"

namespace agynlite {

struct PlatformOptions {
    // Holds store/ and runner/. Required.
    std::filesystem::path data_dir;
    // false keeps the store in memory (volumes still live under data_dir).
    bool durable = true;
    store::Options store;
    crypto::Key master_key{};
    std::string provisioning_token;
    gateway::UserTable users;
    // Defaults to a SteadyClock owned by the platform.
    const Clock* clock = nullptr;
    events::BusOptions bus;
    orchestrator::OrchestratorOptions orchestrator;
    orchestrator::LoopOptions loop;
    // Identity lease GC cadence; 0 disables the background sweeper.
    Millis identity_gc_period{std::chrono::seconds(1)};
    std::optional<runner::BehaviorCatalog> catalog;
};

// Reads AGYNLITE_MASTER_KEY (64 hex chars). Errors: InvalidArgument.
crypto::Key master_key_from_env();

// Wires every module together the way the server runs them. Construction
// replays the store and reconciles the orchestrator against the (empty)
// runner; start() launches the background loops.
class Platform {
public:
    explicit Platform(PlatformOptions options);
    ~Platform();

    Platform(const Platform&) = delete;
    Platform& operator=(const Platform&) = delete;

    void start();
    void stop();

    const Clock& clock() const { return *clock_; }
    store::Store& store() { return *store_; }
    events::Bus& bus() { return *bus_; }
    registry::Registry& registry() { return *registry_; }
    threads::ThreadStore& threads() { return *threads_; }
    identity::IdentityProvider& identities() { return *identities_; }
    authz::Authz& authz() { return *authz_; }
    runner::SimRunner& runner() { return *runner_; }
    orchestrator::Orchestrator& orchestrator() { return *orchestrator_; }
    gateway::Gateway& gateway() { return *gateway_; }
    const std::vector<orchestrator::CorrectiveAction>& recovery_actions() const {
        return recovery_;
    }

private:
    void gc_loop();

    PlatformOptions options_;
    std::unique_ptr<SteadyClock> own_clock_;
    const Clock* clock_;
    std::unique_ptr<store::Store> store_;
    std::unique_ptr<events::Bus> bus_;
    std::unique_ptr<registry::Registry> registry_;
    std::unique_ptr<threads::ThreadStore> threads_;
    std::unique_ptr<identity::IdentityProvider> identities_;
    std::unique_ptr<authz::Authz> authz_;
    std::unique_ptr<runner::SimRunner> runner_;
    std::unique_ptr<orchestrator::Orchestrator> orchestrator_;
    std::unique_ptr<gateway::Gateway> gateway_;
    std::unique_ptr<orchestrator::OrchestratorLoop> loop_;
    std::vector<orchestrator::CorrectiveAction> recovery_;

    std::mutex gc_mutex_;
    std::condition_variable gc_cv_;
    bool running_ = false;
    std::thread gc_thread_;
};

} // namespace agynlite
