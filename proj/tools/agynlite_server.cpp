#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "agynlite/crypto.hpp"
#include "agynlite/error.hpp"
#include "agynlite/platform.hpp"

using namespace agynlite;

namespace {

std::string env_or(const char* name, std::string fallback) {
    const char* v = std::getenv(name);
    return v != nullptr ? v : std::move(fallback);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"agynlite control plane server"};
    std::string data_dir = env_or("AGYNLITE_DATA_DIR", "agynlite-data");
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string users_path;
    std::string key_file;
    std::string provisioning_token = env_or("AGYNLITE_PROVISIONING_TOKEN", "");
    long sweep_ms = 0;
    long gc_ms = 1000;
    long redelivery_ms = 5000;
    std::size_t workers = 4;
    bool in_memory = false;

    app.add_option("--data-dir", data_dir, "store and volume directory (AGYNLITE_DATA_DIR)");
    app.add_option("--host", host, "listen address");
    app.add_option("--port", port, "listen port (0 picks a free one)");
    app.add_option("--users", users_path, "users.json with bearer tokens")->required();
    app.add_option("--master-key-file", key_file,
                   "file holding the 64-hex master key (default: AGYNLITE_MASTER_KEY)");
    app.add_option("--sweep-period-ms", sweep_ms,
                   "idle sweep cadence; default is a tenth of the default idle timeout");
    app.add_option("--identity-gc-ms", gc_ms, "identity lease GC cadence");
    app.add_option("--redelivery-ms", redelivery_ms, "event redelivery timeout");
    app.add_option("--workers", workers, "orchestrator worker threads");
    app.add_flag("--in-memory", in_memory, "keep the store in memory only");
    CLI11_PARSE(app, argc, argv);

    // Handle signals synchronously; block them before any thread starts.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    try {
        PlatformOptions opts;
        opts.data_dir = data_dir;
        opts.durable = !in_memory;
        if (!key_file.empty()) {
            std::ifstream in(key_file);
            std::string hex;
            in >> hex;
            auto key = crypto::parse_key(hex);
            if (!key) {
                std::cerr << "error: " << key_file << " does not hold a 64-hex key\n";
                return 1;
            }
            opts.master_key = *key;
        } else {
            opts.master_key = master_key_from_env();
        }
        opts.provisioning_token = provisioning_token;
        opts.users = gateway::load_users(users_path);
        opts.bus.redelivery_timeout = Millis{redelivery_ms};
        opts.identity_gc_period = Millis{gc_ms};
        opts.loop.workers = workers;
        opts.loop.sweep_period =
            sweep_ms > 0 ? Millis{sweep_ms}
                         : orchestrator::default_sweep_period(
                               std::chrono::seconds(registry::kDefaultIdleTimeoutS));

        Platform platform(std::move(opts));
        for (const auto& a : platform.recovery_actions()) {
            std::cerr << "recovery: " << a.kind << " " << a.target << "\n";
        }
        platform.start();
        gateway::HttpServer server(platform.gateway(), host, port);
        server.start();
        std::cout << "listening on " << server.base_url() << std::endl;

        int sig = 0;
        sigwait(&signals, &sig);
        std::cerr << "shutting down\n";
        server.stop();
        platform.stop();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
