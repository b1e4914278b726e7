#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "agynlite/authz.hpp"
#include "agynlite/configctl.hpp"
#include "agynlite/gateway.hpp"
#include "agynlite/platform.hpp"
#include "agynlite/registry.hpp"
#include "agynlite/sim_runner.hpp"

namespace testsupport {

using namespace agynlite;
using nlohmann::json;
using namespace std::chrono_literals;

class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "agynlite-test-XXXXXX").string();
        if (mkdtemp(tmpl.data()) == nullptr) {
            throw std::runtime_error("mkdtemp failed");
        }
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline bool wait_until(const std::function<bool()>& pred,
                       std::chrono::milliseconds timeout = 5s) {
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
        if (pred()) {
            return true;
        }
        std::this_thread::sleep_for(5ms);
    }
    return pred();
}

// ---------------------------------------------------------------------------
// ReBAC reference: naive fixpoint over derived facts, written from the rules
// (owner implies maintainer implies participant on agents; thread
// participants are direct; a userset subject X#r grants whatever holds r on X).

// (object, relation) -> every subject string that holds it.
using FactTable = std::map<std::pair<std::string, std::string>, std::set<std::string>>;

inline FactTable rebac_fixpoint(const std::vector<authz::RelationTuple>& tuples) {
    static const std::map<std::pair<std::string, std::string>, std::string> implies = {
        {{"agent", "owner"}, "maintainer"},
        {{"agent", "maintainer"}, "participant"},
    };
    auto type = [](const std::string& obj) { return obj.substr(0, obj.find(':')); };
    FactTable facts;
    for (const auto& t : tuples) {
        facts[{t.object, t.relation}].insert(t.subject);
    }
    bool changed = true;
    while (changed) {
        changed = false;
        auto grow = [&](const std::pair<std::string, std::string>& into,
                        const std::set<std::string>& from) {
            auto& dst = facts[into];
            for (const auto& s : from) {
                changed |= dst.insert(s).second;
            }
        };
        for (const auto& t : tuples) {
            auto hash = t.subject.find('#');
            if (hash == std::string::npos) {
                continue;
            }
            auto it = facts.find({t.subject.substr(0, hash), t.subject.substr(hash + 1)});
            if (it != facts.end()) {
                auto copy = it->second;
                grow({t.object, t.relation}, copy);
            }
        }
        auto snapshot = facts;
        for (const auto& [node, subs] : snapshot) {
            auto it = implies.find({type(node.first), node.second});
            if (it != implies.end()) {
                grow({node.first, it->second}, subs);
            }
        }
    }
    return facts;
}

inline std::string oracle_relation(const std::string& object, const std::string& permission) {
    auto type = object.substr(0, object.find(':'));
    static const std::map<std::pair<std::string, std::string>, std::string> perms = {
        {{"agent", "configure"}, "maintainer"},  {{"agent", "delete"}, "owner"},
        {{"agent", "create_thread"}, "participant"}, {{"agent", "owner"}, "owner"},
        {{"agent", "maintainer"}, "maintainer"}, {{"agent", "participant"}, "participant"},
        {{"thread", "read"}, "participant"},     {{"thread", "post"}, "participant"},
        {{"thread", "participant"}, "participant"},
    };
    return perms.at({type, permission});
}

inline bool oracle_check(const FactTable& facts, const std::string& object,
                         const std::string& permission, const std::string& subject) {
    auto it = facts.find({object, oracle_relation(object, permission)});
    return it != facts.end() && it->second.count(subject) != 0;
}

struct TupleUniverse {
    std::vector<std::string> agents;
    std::vector<std::string> threads;
    std::vector<std::string> principals;
};

inline TupleUniverse make_universe(int agents, int threads, int users) {
    TupleUniverse u;
    for (int i = 0; i < agents; ++i) {
        u.agents.push_back("agent:a" + std::to_string(i));
    }
    for (int i = 0; i < threads; ++i) {
        u.threads.push_back("thread:t" + std::to_string(i));
    }
    for (int i = 0; i < users; ++i) {
        u.principals.push_back("user:u" + std::to_string(i));
    }
    for (const auto& a : u.agents) {
        u.principals.push_back(a);
    }
    return u;
}

template <class Rng>
std::vector<authz::RelationTuple> random_graph(Rng& rng, const TupleUniverse& u,
                                               std::size_t max_tuples) {
    static const std::vector<std::string> agent_rels = {"owner", "maintainer", "participant"};
    std::uniform_int_distribution<std::size_t> count(0, max_tuples);
    auto pick = [&](const auto& v) {
        return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };
    std::set<authz::RelationTuple> out;
    auto n = count(rng);
    while (out.size() < n) {
        authz::RelationTuple t;
        bool on_agent = std::bernoulli_distribution(0.6)(rng);
        t.object = on_agent ? pick(u.agents) : pick(u.threads);
        t.relation = on_agent ? pick(agent_rels) : "participant";
        if (std::bernoulli_distribution(0.35)(rng)) {
            bool us_agent = std::bernoulli_distribution(0.7)(rng);
            t.subject = us_agent ? pick(u.agents) + "#" + pick(agent_rels)
                                 : pick(u.threads) + "#participant";
        } else {
            t.subject = pick(u.principals);
        }
        out.insert(t);
    }
    return {out.begin(), out.end()};
}

template <class Rng>
std::string random_token(Rng& rng, std::size_t n = 24) {
    static const char alphabet[] = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    std::uniform_int_distribution<std::size_t> d(0, sizeof(alphabet) - 2);
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(alphabet[d(rng)]);
    }
    return out;
}

// 1-5 sidecars, 0-8 bindings over the given secrets, a few plain env vars.
template <class Rng>
registry::AgentDefinition random_definition(Rng& rng, const std::string& id,
                                            const std::vector<std::string>& secrets,
                                            const std::string& main_behavior = "quiet",
                                            const std::string& sidecar_behavior = "quiet") {
    auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
    registry::AgentDefinition d;
    d.agent_id = id;
    d.system_prompt = "prompt " + random_token(rng, 8);
    d.model = "model-" + std::to_string(pick(3));
    d.main_container = {"main", main_behavior, {}};
    auto sidecars = 1 + pick(5);
    for (std::size_t i = 0; i < sidecars; ++i) {
        d.sidecars.push_back({"mcp" + std::to_string(i), sidecar_behavior, {}});
    }
    std::vector<registry::ContainerSpec*> all{&d.main_container};
    for (auto& c : d.sidecars) {
        all.push_back(&c);
    }
    for (auto* c : all) {
        for (std::size_t i = 0, n = pick(3); i < n; ++i) {
            c->env["PLAIN_" + std::to_string(i)] = "plain-" + random_token(rng, 6);
        }
    }
    auto bindings = secrets.empty() ? 0 : pick(9);
    std::set<std::pair<std::string, std::string>> used;
    for (std::size_t i = 0; i < bindings; ++i) {
        registry::SecretBinding b;
        b.secret_name = secrets[pick(secrets.size())];
        // Mostly sidecars; the main container only now and then.
        b.target_container = pick(5) == 0 ? "main" : d.sidecars[pick(d.sidecars.size())].name;
        b.env_var = "SECRET_" + std::to_string(i);
        if (used.insert({b.target_container, b.env_var}).second) {
            d.secret_bindings.push_back(b);
        }
    }
    if (pick(2) == 0) {
        d.volumes.push_back({"ws", "/workspace"});
    }
    d.idle_timeout_s = 1 + static_cast<int>(pick(600));
    d.keepalive_interval_s = 1 + static_cast<int>(pick(30));
    return d;
}

// ---------------------------------------------------------------------------
// Behaviors used by tests.

// Does nothing until stopped.
class QuietBehavior : public runner::Behavior {
public:
    void run(runner::ContainerContext& ctx) override {
        while (!ctx.stopping()) {
            ctx.receive(20ms);
        }
    }
};

// Records every thread message its main container receives.
struct Inbox {
    std::mutex mutex;
    std::vector<json> messages;

    void push(json m) {
        std::lock_guard lock(mutex);
        messages.push_back(std::move(m));
    }
    std::size_t size() {
        std::lock_guard lock(mutex);
        return messages.size();
    }
    std::vector<json> snapshot() {
        std::lock_guard lock(mutex);
        return messages;
    }
};

class RecorderBehavior : public runner::Behavior {
public:
    explicit RecorderBehavior(std::shared_ptr<Inbox> inbox) : inbox_(std::move(inbox)) {}
    void run(runner::ContainerContext& ctx) override {
        while (!ctx.stopping()) {
            if (auto e = ctx.receive(20ms); e && e->kind == runner::Envelope::Kind::ThreadMessage) {
                auto m = e->message;
                m["workload_id"] = ctx.workload_id();
                m["revision"] = ctx.thread_context().value("revision", 0);
                inbox_->push(std::move(m));
            }
        }
    }

private:
    std::shared_ptr<Inbox> inbox_;
};

inline runner::BehaviorCatalog test_catalog(std::shared_ptr<Inbox> inbox) {
    auto c = runner::BehaviorCatalog::builtin();
    c.add("quiet", [] { return std::make_unique<QuietBehavior>(); });
    c.add("recorder", [inbox] { return std::make_unique<RecorderBehavior>(inbox); });
    return c;
}

// ---------------------------------------------------------------------------

inline registry::AgentDefinition simple_agent(const std::string& id,
                                              const std::string& behavior = "echo-agent") {
    registry::AgentDefinition d;
    d.agent_id = id;
    d.system_prompt = "you are " + id;
    d.model = "model-x";
    d.main_container = {"main", behavior, {}};
    return d;
}

inline gateway::UserTable test_users() {
    gateway::UserTable users;
    for (auto [name, admin] : std::vector<std::pair<std::string, bool>>{
             {"root", true}, {"alice", false}, {"bob", false}, {"carol", false}}) {
        users["tok-" + name] = gateway::User{name, "tok-" + name, admin};
    }
    return users;
}

struct PlatformConfig {
    bool manual_clock = true;
    bool durable = false;
    bool start = false;
    orchestrator::LoopOptions loop{Millis{0}, 4, "orchestrator"};
    Millis identity_gc_period{0};
    events::BusOptions bus;
    std::filesystem::path data_dir;  // defaults to a fresh temp dir
};

// A whole platform over an in-memory store, driven either by hand (call the
// orchestrator directly) or by its background loops.
class TestPlatform {
public:
    explicit TestPlatform(PlatformConfig cfg = {})
        : clock_(Millis{1'000'000}), inbox_(std::make_shared<Inbox>()) {
        PlatformOptions o;
        o.data_dir = cfg.data_dir.empty() ? dir_.path() : cfg.data_dir;
        o.durable = cfg.durable;
        o.master_key = crypto::random_key();
        o.provisioning_token = "prov-token";
        o.users = test_users();
        o.clock = cfg.manual_clock ? static_cast<const Clock*>(&clock_) : nullptr;
        o.bus = cfg.bus;
        o.loop = cfg.loop;
        o.identity_gc_period = cfg.identity_gc_period;
        o.catalog = test_catalog(inbox_);
        platform_ = std::make_unique<Platform>(std::move(o));
        if (cfg.start) {
            platform_->start();
        }
    }

    Platform& operator*() { return *platform_; }
    Platform* operator->() { return platform_.get(); }
    ManualClock& clock() { return clock_; }
    Inbox& inbox() { return *inbox_; }
    const std::filesystem::path& dir() const { return dir_.path(); }

    HttpResponse call(const std::string& token, const std::string& method,
                      const std::string& path, const json& body = nullptr,
                      HeaderMap headers = {}) {
        HttpRequest req;
        req.method = method;
        req.path = path;
        for (auto& [k, v] : headers) {
            req.set_header(k, v);
        }
        if (!token.empty()) {
            req.set_header("authorization", "Bearer " + token);
        }
        if (!body.is_null()) {
            req.body = body.dump();
        }
        return platform_->gateway().handle(req);
    }

    // Registers an agent owned by alice.
    std::uint64_t add_agent(const registry::AgentDefinition& def, const std::string& owner = "alice") {
        auto r = call("tok-" + owner, "PUT", "/agents/" + def.agent_id, registry::to_json(def, false));
        if (r.status >= 300) {
            throw std::runtime_error("add_agent failed: " + r.body);
        }
        return json::parse(r.body).at("revision").get<std::uint64_t>();
    }

    std::string open_thread(const std::string& agent_id, const std::string& thread_id = "",
                            const std::string& user = "alice") {
        json body{{"agent_id", agent_id}};
        if (!thread_id.empty()) {
            body["thread_id"] = thread_id;
        }
        auto r = call("tok-" + user, "POST", "/threads", body);
        if (r.status >= 300) {
            throw std::runtime_error("open_thread failed: " + r.body);
        }
        return json::parse(r.body).at("thread_id").get<std::string>();
    }

    // Posts as a user and returns the published thread.message event.
    events::Event post(const std::string& thread_id, const std::string& text,
                       const std::string& user = "alice") {
        auto r = call("tok-" + user, "POST", "/threads/" + thread_id + "/messages",
                      json{{"text", text}});
        if (r.status >= 300) {
            throw std::runtime_error("post failed: " + r.body);
        }
        auto id = json::parse(r.body).at("message_id").get<std::string>();
        for (const auto& e : platform_->bus().history(events::kThreadMessage)) {
            if (e.payload.value("message_id", "") == id) {
                return e;
            }
        }
        throw std::runtime_error("message event not found");
    }

    std::vector<threads::Message> messages(const std::string& thread_id) {
        return platform_->threads().messages(thread_id);
    }

private:
    TempDir dir_;
    ManualClock clock_;
    std::shared_ptr<Inbox> inbox_;
    std::unique_ptr<Platform> platform_;
};

} // namespace testsupport
