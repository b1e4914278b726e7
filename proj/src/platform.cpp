#include "agynlite/platform.hpp"

#include <cstdlib>

#include "agynlite/error.hpp"

namespace agynlite {

crypto::Key master_key_from_env() {
    const char* hex = std::getenv("AGYNLITE_MASTER_KEY");
    if (hex == nullptr) {
        fail(Errc::InvalidArgument, "AGYNLITE_MASTER_KEY is not set");
    }
    auto key = crypto::parse_key(hex);
    if (!key) {
        fail(Errc::InvalidArgument, "AGYNLITE_MASTER_KEY must be 64 hex characters");
    }
    return *key;
}

Platform::Platform(PlatformOptions options) : options_(std::move(options)) {
    if (options_.data_dir.empty()) {
        fail(Errc::InvalidArgument, "platform needs a data directory");
    }
    if (options_.clock == nullptr) {
        own_clock_ = std::make_unique<SteadyClock>();
        clock_ = own_clock_.get();
    } else {
        clock_ = options_.clock;
    }
    std::filesystem::create_directories(options_.data_dir);
    store_ = options_.durable
                 ? std::make_unique<store::Store>(options_.data_dir / "store", options_.store)
                 : std::make_unique<store::Store>();

    auto sealing = crypto::derive_key(options_.master_key, 1, "agynseal");
    auto signing = crypto::derive_key(options_.master_key, 2, "agynsign");

    bus_ = std::make_unique<events::Bus>(*store_, *clock_, options_.bus);
    registry_ = std::make_unique<registry::Registry>(*store_, *bus_, sealing);
    threads_ = std::make_unique<threads::ThreadStore>(*store_, *clock_);
    identities_ = std::make_unique<identity::IdentityProvider>(*store_, *bus_, *clock_, signing,
                                                               options_.provisioning_token);
    authz_ = std::make_unique<authz::Authz>(*store_);
    // Workloads reach the platform only through the gateway, carrying their token.
    runner::ProxyFactory proxies = [this](const std::string& token) -> std::shared_ptr<ApiTransport> {
        return std::make_shared<gateway::InProcessTransport>(*gateway_,
                                                             gateway::identity_token(token));
    };
    runner_ = std::make_unique<runner::SimRunner>(
        options_.data_dir / "runner",
        options_.catalog ? *options_.catalog : runner::BehaviorCatalog::builtin(), proxies);
    orchestrator_ = std::make_unique<orchestrator::Orchestrator>(
        *store_, *bus_, *registry_, *threads_, *identities_, *runner_, options_.orchestrator);
    gateway_ = std::make_unique<gateway::Gateway>(
        gateway::Services{*store_, *bus_, *registry_, *threads_, *identities_, *authz_, *clock_,
                          orchestrator_.get()},
        options_.users);
    recovery_ = orchestrator_->recover(clock_->now());
    loop_ = std::make_unique<orchestrator::OrchestratorLoop>(*orchestrator_, *bus_, *clock_,
                                                              options_.loop);
}

Platform::~Platform() {
    stop();
    // Containers call back into the gateway; stop them before it goes away.
    runner_->stop_all();
}

void Platform::start() {
    {
        std::lock_guard lock(gc_mutex_);
        if (running_) {
            return;
        }
        running_ = true;
    }
    loop_->start();
    if (options_.identity_gc_period.count() > 0) {
        gc_thread_ = std::thread([this] { gc_loop(); });
    }
}

void Platform::stop() {
    {
        std::lock_guard lock(gc_mutex_);
        if (!running_) {
            return;
        }
        running_ = false;
    }
    gc_cv_.notify_all();
    if (gc_thread_.joinable()) {
        gc_thread_.join();
    }
    loop_->stop();
}

void Platform::gc_loop() {
    std::unique_lock lock(gc_mutex_);
    while (running_) {
        gc_cv_.wait_for(lock, options_.identity_gc_period, [&] { return !running_; });
        if (!running_) {
            return;
        }
        lock.unlock();
        try {
            identities_->gc_sweep(clock_->now());
        } catch (const std::exception&) {
        }
        lock.lock();
    }
}

} // namespace agynlite
