#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include "agynlite/authz.hpp"
#include "agynlite/clock.hpp"
#include "agynlite/error.hpp"
#include "agynlite/events.hpp"
#include "agynlite/http.hpp"
#include "agynlite/identity.hpp"
#include "agynlite/orchestrator.hpp"
#include "agynlite/registry.hpp"
#include "agynlite/store.hpp"
#include "agynlite/threads.hpp"

namespace httplib {
class Server;
}

namespace agynlite::gateway {

inline constexpr std::string_view kTokenHeader = "x-agyn-identity-token";
inline constexpr std::string_view kIdentityHeader = "x-agyn-identity";

struct User {
    std::string user;
    std::string token;
    bool admin = false;
};

// token -> user
using UserTable = std::map<std::string, User>;

// Accepts [{"user": "...", "token": "...", "admin": bool}, ...].
UserTable users_from_json(const nlohmann::json& doc);
UserTable load_users(const std::string& path);

struct Principal {
    enum class Kind { User, Identity };
    Kind kind = Kind::User;
    // "user:alice" for users, the identity id for overlay identities.
    std::string id;
    // Subject used in relation checks: "user:alice" or "agent:<agent_id>".
    std::string subject;
    bool admin = false;
    std::optional<identity::Identity> identity;
};

struct Services {
    store::Store& store;
    events::Bus& bus;
    registry::Registry& registry;
    threads::ThreadStore& threads;
    identity::IdentityProvider& identities;
    authz::Authz& authz;
    const Clock& clock;
    // Optional; keep-alive and instance routes answer 503 without it.
    orchestrator::Orchestrator* orchestrator = nullptr;
};

using ServiceHandler = std::function<HttpResponse(const HttpRequest&)>;
// Sees every accepted request as it is handed to the internal handler.
using InternalTap = std::function<void(const HttpRequest&)>;

HttpResponse json_response(int status, const nlohmann::json& body);
HttpResponse error_response(int status, std::string_view code, std::string_view message);
int status_for(Errc code);

// The single ingress. Transport independent: handle() takes a parsed request
// and can be driven in process or from the HTTP server below.
class Gateway {
public:
    Gateway(Services services, UserTable users);
    ~Gateway();

    HttpResponse handle(HttpRequest request);

    // Internal services reachable through POST /dial/<name>.
    void register_service(std::string name, ServiceHandler handler);
    void set_internal_tap(InternalTap tap);

    // Errors: Unauthenticated.
    Principal authenticate(const HttpRequest& request) const;

    // Ends open event streams.
    void shutdown();
    bool shutting_down() const { return shutdown_; }

private:
    HttpResponse dispatch(const Principal& p, const HttpRequest& req);

    HttpResponse create_thread(const Principal& p, const HttpRequest& req);
    HttpResponse list_threads(const Principal& p);
    HttpResponse get_messages(const Principal& p, const HttpRequest& req, const std::string& id);
    HttpResponse post_message(const Principal& p, const HttpRequest& req, const std::string& id);
    HttpResponse put_agent(const Principal& p, const HttpRequest& req, const std::string& id);
    HttpResponse delete_agent(const Principal& p, const HttpRequest& req, const std::string& id);
    HttpResponse keepalive(const Principal& p, const std::string& instance_id);
    HttpResponse put_secret(const Principal& p, const HttpRequest& req);
    HttpResponse delete_secret(const Principal& p, const std::string& name);
    HttpResponse compare_secret(const Principal& p, const HttpRequest& req);
    HttpResponse dial(const Principal& p, const HttpRequest& req, const std::string& service);
    HttpResponse event_stream(const Principal& p, const HttpRequest& req);
    HttpResponse write_tuple(const Principal& p, const HttpRequest& req, bool erase);
    HttpResponse check_tuple(const Principal& p, const HttpRequest& req);

    bool allowed(const Principal& p, std::string_view object, std::string_view permission) const;
    void require(const Principal& p, std::string_view object, std::string_view permission) const;
    void require_admin(const Principal& p) const;
    bool can_see_thread(const Principal& p, const std::string& thread_id) const;

    Services s_;
    UserTable users_;
    mutable std::mutex mutex_;
    std::map<std::string, ServiceHandler> services_;
    InternalTap tap_;
    std::atomic<bool> shutdown_{false};
};

// Serves a Gateway over HTTP/1.1.
class HttpServer {
public:
    HttpServer(Gateway& gateway, std::string host = "127.0.0.1", int port = 0,
               std::size_t threads = 64);
    ~HttpServer();

    // Binds and starts serving on a background thread; returns the port.
    int start();
    void stop();
    int port() const { return port_; }
    std::string base_url() const;

private:
    Gateway& gateway_;
    std::string host_;
    int port_;
    std::size_t threads_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

// Calls a Gateway directly. Streaming responses are drained into the body,
// so event streams must be bounded (max_events / timeout_ms).
class InProcessTransport : public ApiTransport {
public:
    InProcessTransport(Gateway& gateway, HeaderMap default_headers = {});
    HttpResponse call(const HttpRequest& request) override;

private:
    Gateway& gateway_;
    HeaderMap defaults_;
};

class HttpClientTransport : public ApiTransport {
public:
    explicit HttpClientTransport(std::string base_url, HeaderMap default_headers = {});
    HttpResponse call(const HttpRequest& request) override;
    // Feeds body chunks to sink until it returns false or the server closes.
    int stream(const HttpRequest& request, const StreamSink& sink);

private:
    std::string base_url_;
    HeaderMap defaults_;
};

HeaderMap bearer(std::string_view token);
HeaderMap identity_token(std::string_view credential);

} // namespace agynlite::gateway
