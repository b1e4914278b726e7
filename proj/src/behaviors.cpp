#include <chrono>
#include <deque>
#include <fstream>
#include <sstream>

#include "agynlite/sim_runner.hpp"

namespace agynlite::runner {

namespace {

using nlohmann::json;
using std::chrono::milliseconds;
using std::chrono::steady_clock;

// Conversational agent loop shared by echo-agent and dialer-agent.
//
// Inbound thread messages are answered through the gateway. While active
// (a window after the last handled message) the agent posts keep-alives
// every keepalive interval; once the window closes it goes quiet, which is
// what lets the orchestrator reclaim it.
//
// Commands: "write k=v" and "read k" use the first mounted volume,
// "whoami" reports the definition revision, "tools" queries every sidecar
// over loopback, "dial <service>" (dialer-agent only) tries an overlay dial.
// Anything else is echoed back.
class AgentLoop final : public Behavior {
public:
    explicit AgentLoop(bool can_dial) : can_dial_(can_dial) {}

    void run(ContainerContext& ctx) override {
        const auto& tc = ctx.thread_context();
        instance_id_ = tc.value("instance_id", "");
        thread_id_ = tc.value("thread_id", "");
        auto keepalive = milliseconds(tc.value("keepalive_interval_ms", 10'000));
        auto window = keepalive * 2;
        if (auto it = ctx.env().find("ECHO_ACTIVE_WINDOW_MS"); it != ctx.env().end()) {
            window = milliseconds(std::stoll(it->second));
        }

        auto active_until = steady_clock::now() + window;
        auto next_keepalive = steady_clock::now();
        while (!ctx.stopping()) {
            auto now = steady_clock::now();
            if (now < active_until && now >= next_keepalive) {
                send_keepalive(ctx);
                next_keepalive = now + keepalive;
            }
            milliseconds wait(200);
            if (now < active_until) {
                wait = std::max(milliseconds(1), std::chrono::duration_cast<milliseconds>(
                                                     std::min(next_keepalive, active_until) - now));
            }
            std::optional<Envelope> e;
            if (!backlog_.empty()) {
                e = std::move(backlog_.front());
                backlog_.pop_front();
            } else {
                e = ctx.receive(wait);
            }
            if (!e || e->kind != Envelope::Kind::ThreadMessage) {
                continue;
            }
            handle(ctx, e->message);
            if (steady_clock::now() >= active_until) {
                next_keepalive = steady_clock::now();
            }
            active_until = steady_clock::now() + window;
        }
    }

private:
    void send_keepalive(ContainerContext& ctx) {
        HttpRequest req;
        req.method = "POST";
        req.path = "/instances/" + instance_id_ + "/keepalive";
        ctx.call(req);
    }

    void reply(ContainerContext& ctx, const json& inbound, const std::string& text) {
        HttpRequest req;
        req.method = "POST";
        req.path = "/threads/" + inbound.value("thread_id", thread_id_) + "/messages";
        req.body = json{{"text", text}, {"in_reply_to", inbound.value("message_id", "")}}.dump();
        ctx.call(req);
    }

    std::optional<std::filesystem::path> workspace(ContainerContext& ctx) {
        auto mounts = ctx.mount_paths();
        if (mounts.empty()) {
            return std::nullopt;
        }
        return ctx.resolve_mount(mounts.front());
    }

    void handle(ContainerContext& ctx, const json& message) {
        std::string text = message.value("text", "");
        const auto& tc = ctx.thread_context();

        if (text.rfind("write ", 0) == 0) {
            auto body = text.substr(6);
            auto eq = body.find('=');
            auto ws = workspace(ctx);
            if (eq == std::string::npos || !ws) {
                reply(ctx, message, "error write");
                return;
            }
            auto key = body.substr(0, eq);
            {
                std::ofstream out(*ws / key, std::ios::binary | std::ios::trunc);
                out << body.substr(eq + 1);
            }
            reply(ctx, message, "ok " + key);
        } else if (text.rfind("read ", 0) == 0) {
            auto key = text.substr(5);
            auto ws = workspace(ctx);
            std::ifstream in(ws ? *ws / key : std::filesystem::path{}, std::ios::binary);
            if (!in) {
                reply(ctx, message, "missing " + key);
                return;
            }
            std::stringstream buf;
            buf << in.rdbuf();
            reply(ctx, message, "value " + key + "=" + buf.str());
        } else if (text == "whoami") {
            reply(ctx, message,
                  "revision=" + std::to_string(tc.value("revision", 0)) +
                      " prompt=" + tc.value("system_prompt", "") + " model=" + tc.value("model", ""));
        } else if (text == "tools") {
            reply(ctx, message, "tools " + query_tools(ctx).dump());
        } else if (can_dial_ && text.rfind("dial ", 0) == 0) {
            auto service = text.substr(5);
            HttpRequest req;
            req.method = "POST";
            req.path = "/dial/" + service;
            req.body = "{}";
            auto res = ctx.call(req);
            reply(ctx, message, "dial " + service + " " + std::to_string(res.status));
        } else {
            reply(ctx, message, "echo: " + text);
        }
    }

    json query_tools(ContainerContext& ctx) {
        auto peers = ctx.peers();
        for (const auto& p : peers) {
            ctx.send_loopback(p, "env?");
        }
        json answers = json::object();
        auto deadline = steady_clock::now() + milliseconds(2000);
        while (answers.size() < peers.size() && steady_clock::now() < deadline &&
               !ctx.stopping()) {
            auto e = ctx.receive(milliseconds(50));
            if (!e) {
                continue;
            }
            if (e->kind == Envelope::Kind::Loopback) {
                answers[e->from] = json::parse(e->payload, nullptr, false);
            } else {
                backlog_.push_back(std::move(*e));
            }
        }
        return answers;
    }

    bool can_dial_;
    std::string instance_id_;
    std::string thread_id_;
    std::deque<Envelope> backlog_;
};

// MCP-server stand-in: answers every loopback request with the names of the
// env vars it can see.
class MockMcp final : public Behavior {
public:
    void run(ContainerContext& ctx) override {
        while (!ctx.stopping()) {
            auto e = ctx.receive(milliseconds(200));
            if (!e || e->kind != Envelope::Kind::Loopback) {
                continue;
            }
            json keys = json::array();
            for (const auto& [k, _] : ctx.env()) {
                keys.push_back(k);
            }
            try {
                ctx.send_loopback(e->from,
                                  json{{"container", ctx.name()}, {"env_keys", keys}}.dump());
            } catch (const std::exception&) {
            }
        }
    }
};

} // namespace

BehaviorCatalog BehaviorCatalog::builtin() {
    BehaviorCatalog c;
    c.add("echo-agent", [] { return std::make_unique<AgentLoop>(false); });
    c.add("dialer-agent", [] { return std::make_unique<AgentLoop>(true); });
    c.add("mock-mcp", [] { return std::make_unique<MockMcp>(); });
    return c;
}

} // namespace agynlite::runner
