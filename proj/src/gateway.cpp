#include "agynlite/gateway.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "agynlite/crypto.hpp"
#include "agynlite/error.hpp"

namespace agynlite::gateway {

using nlohmann::json;
using identity::IdentityClass;

namespace {

std::vector<std::string> split_path(std::string_view path) {
    std::vector<std::string> parts;
    std::size_t i = 0;
    while (i < path.size()) {
        auto j = path.find('/', i);
        if (j == std::string_view::npos) {
            j = path.size();
        }
        if (j > i) {
            parts.emplace_back(path.substr(i, j - i));
        }
        i = j + 1;
    }
    return parts;
}

json parse_body(const HttpRequest& req) {
    if (req.body.empty()) {
        return json::object();
    }
    try {
        return json::parse(req.body);
    } catch (const json::parse_error& e) {
        fail(Errc::ParseError, std::string("request body is not JSON: ") + e.what());
    }
}

std::optional<std::uint64_t> parse_uint(std::string_view text, std::string_view what) {
    if (text.empty()) {
        return std::nullopt;
    }
    if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
        text = text.substr(1, text.size() - 2);
    }
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        fail(Errc::InvalidArgument, std::string(what) + " must be an unsigned integer");
    }
    return v;
}

std::string required_string(const json& body, const char* field) {
    auto it = body.find(field);
    if (it == body.end() || !it->is_string() || it->get<std::string>().empty()) {
        fail(Errc::ValidationError, std::string("missing string field '") + field + "'");
    }
    return it->get<std::string>();
}

json identity_summary(const identity::Identity& i) {
    return json{{"identity_id", i.identity_id},
                {"class", identity::to_string(i.identity_class)},
                {"subject", i.subject},
                {"attributes", i.attributes},
                {"created_ts", i.created_ts.count()},
                {"lease_id", i.lease_id}};
}

json policy_json(const authz::DialPolicy& p) {
    return json{{"policy_id", p.policy_id}, {"selector", p.selector}, {"services", p.services}};
}

std::string author_kind(const Principal& p) {
    if (p.kind == Principal::Kind::User) {
        return "user";
    }
    return p.identity->identity_class == IdentityClass::EphemeralWorkload ? "agent" : "service";
}

} // namespace

UserTable users_from_json(const json& doc) {
    if (!doc.is_array()) {
        fail(Errc::ValidationError, "users file must be a JSON array");
    }
    UserTable out;
    for (const auto& entry : doc) {
        User u;
        u.user = required_string(entry, "user");
        u.token = required_string(entry, "token");
        u.admin = entry.value("admin", false);
        if (!registry::valid_name(u.user)) {
            fail(Errc::ValidationError, "invalid user name '" + u.user + "'");
        }
        if (!out.emplace(u.token, u).second) {
            fail(Errc::ValidationError, "duplicate token for user '" + u.user + "'");
        }
    }
    return out;
}

UserTable load_users(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        fail(Errc::NotFound, "cannot open users file " + path);
    }
    try {
        return users_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        fail(Errc::ParseError, path + ": " + e.what());
    }
}

HttpResponse json_response(int status, const json& body) {
    HttpResponse r;
    r.status = status;
    r.body = body.dump();
    return r;
}

HttpResponse error_response(int status, std::string_view code, std::string_view message) {
    return json_response(status, json{{"code", code}, {"message", message}});
}

int status_for(Errc code) {
    switch (code) {
    case Errc::Unauthenticated:
    case Errc::BadToken:
        return 401;
    case Errc::Forbidden:
        return 403;
    case Errc::NotFound:
    case Errc::UnknownInstance:
    case Errc::UnknownWorkload:
        return 404;
    case Errc::VersionConflict:
    case Errc::WrongState:
    case Errc::DuplicateIdentity:
    case Errc::VolumeBusy:
    case Errc::StalePlan:
        return 409;
    case Errc::InvalidArgument:
    case Errc::ValidationError:
    case Errc::SchemaViolation:
    case Errc::SchemaError:
    case Errc::ParseError:
    case Errc::UnresolvedSecret:
    case Errc::UnknownModule:
    case Errc::DepthExceeded:
        return 400;
    case Errc::RunnerUnavailable:
        return 503;
    default:
        return 500;
    }
}

Gateway::Gateway(Services services, UserTable users)
    : s_(services), users_(std::move(users)) {}

Gateway::~Gateway() { shutdown(); }

void Gateway::register_service(std::string name, ServiceHandler handler) {
    std::lock_guard lock(mutex_);
    services_[std::move(name)] = std::move(handler);
}

void Gateway::set_internal_tap(InternalTap tap) {
    std::lock_guard lock(mutex_);
    tap_ = std::move(tap);
}

void Gateway::shutdown() { shutdown_ = true; }

Principal Gateway::authenticate(const HttpRequest& request) const {
    auto token = request.header(kTokenHeader);
    if (!token.empty()) {
        auto ident = s_.identities.verify(token);
        if (!ident) {
            fail(Errc::Unauthenticated, "identity token rejected");
        }
        Principal p;
        p.kind = Principal::Kind::Identity;
        p.id = ident->identity_id;
        if (ident->identity_class == IdentityClass::EphemeralWorkload) {
            p.subject = "agent:" + ident->attributes.at("agent_id");
        } else {
            p.subject = "service:" + ident->subject;
        }
        p.identity = std::move(ident);
        return p;
    }
    auto auth = request.header("authorization");
    constexpr std::string_view prefix = "Bearer ";
    if (auth.size() > prefix.size() && auth.compare(0, prefix.size(), prefix) == 0) {
        auto presented = auth.substr(prefix.size());
        for (const auto& [tok, user] : users_) {
            if (crypto::equal_constant_time(tok, presented)) {
                Principal p;
                p.kind = Principal::Kind::User;
                p.id = "user:" + user.user;
                p.subject = p.id;
                p.admin = user.admin;
                return p;
            }
        }
        fail(Errc::Unauthenticated, "bearer token rejected");
    }
    fail(Errc::Unauthenticated, "no credentials presented");
}

HttpResponse Gateway::handle(HttpRequest request) {
    try {
        // Whatever the client claims about its identity is discarded.
        request.headers.erase(std::string(kIdentityHeader));
        Principal p;
        try {
            p = authenticate(request);
        } catch (const Error& e) {
            return error_response(401, "Unauthenticated", e.what());
        }
        request.set_header(kIdentityHeader, p.id);
        InternalTap tap;
        {
            std::lock_guard lock(mutex_);
            tap = tap_;
        }
        if (tap) {
            tap(request);
        }
        return dispatch(p, request);
    } catch (const Error& e) {
        return error_response(status_for(e.code()), errc_name(e.code()), e.what());
    } catch (const json::exception& e) {
        return error_response(400, "ValidationError", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "Internal", e.what());
    }
}

HttpResponse Gateway::dispatch(const Principal& p, const HttpRequest& req) {
    auto parts = split_path(req.path);
    const auto& m = req.method;
    auto n = parts.size();
    auto at = [&](std::size_t i, std::string_view s) { return i < n && parts[i] == s; };

    if (at(0, "threads")) {
        if (n == 1 && m == "POST") {
            return create_thread(p, req);
        }
        if (n == 1 && m == "GET") {
            return list_threads(p);
        }
        if (n == 2 && m == "GET") {
            require(p, "thread:" + parts[1], "read");
            auto t = s_.threads.find_thread(parts[1]);
            if (!t) {
                fail(Errc::NotFound, "thread '" + parts[1] + "' not found");
            }
            return json_response(200, threads::to_json(*t));
        }
        if (n == 3 && at(2, "messages") && m == "GET") {
            return get_messages(p, req, parts[1]);
        }
        if (n == 3 && at(2, "messages") && m == "POST") {
            return post_message(p, req, parts[1]);
        }
    } else if (at(0, "agents")) {
        if (n == 1 && m == "GET") {
            json out = json::array();
            for (const auto& d : s_.registry.list_definitions()) {
                out.push_back(registry::to_json(d));
            }
            return json_response(200, out);
        }
        if (n == 2 && m == "GET") {
            return json_response(200, registry::to_json(s_.registry.get_definition(parts[1])));
        }
        if (n == 2 && m == "PUT") {
            return put_agent(p, req, parts[1]);
        }
        if (n == 2 && m == "DELETE") {
            return delete_agent(p, req, parts[1]);
        }
    } else if (at(0, "instances")) {
        if (n == 1 && m == "GET") {
            if (s_.orchestrator == nullptr) {
                return error_response(503, "Unavailable", "orchestrator not attached");
            }
            json out = json::array();
            for (const auto& i : s_.orchestrator->instances()) {
                out.push_back(orchestrator::to_json(i));
            }
            return json_response(200, out);
        }
        if (n == 3 && at(2, "keepalive") && m == "POST") {
            return keepalive(p, parts[1]);
        }
    } else if (at(0, "secrets")) {
        if (n == 1 && m == "POST") {
            return put_secret(p, req);
        }
        if (n == 1 && m == "GET") {
            json out = json::array();
            for (const auto& s : s_.registry.list_secrets()) {
                out.push_back(json{{"name", s.name}, {"owner_agent", s.owner_agent}});
            }
            return json_response(200, out);
        }
        if (n == 2 && at(1, "compare") && m == "POST") {
            return compare_secret(p, req);
        }
        if (n == 2 && m == "DELETE") {
            return delete_secret(p, parts[1]);
        }
    } else if (at(0, "dial") && n == 2 && m == "POST") {
        return dial(p, req, parts[1]);
    } else if (at(0, "events") && at(1, "stream") && n == 2 && m == "GET") {
        return event_stream(p, req);
    } else if (at(0, "tuples")) {
        if (n == 1 && m == "POST") {
            return write_tuple(p, req, false);
        }
        if (n == 1 && m == "DELETE") {
            return write_tuple(p, req, true);
        }
        if (n == 1 && m == "GET") {
            require_admin(p);
            json out = json::array();
            for (const auto& t : s_.authz.tuples()) {
                out.push_back(t.to_string());
            }
            return json_response(200, out);
        }
        if (n == 2 && at(1, "check") && m == "POST") {
            return check_tuple(p, req);
        }
    } else if (at(0, "policies")) {
        require_admin(p);
        if (n == 1 && m == "GET") {
            json out = json::array();
            for (const auto& pol : s_.authz.policies()) {
                out.push_back(policy_json(pol));
            }
            return json_response(200, out);
        }
        if (n == 1 && m == "POST") {
            auto body = parse_body(req);
            authz::DialPolicy pol;
            pol.policy_id = body.value("policy_id", "");
            pol.selector = body.at("selector").get<std::map<std::string, std::string>>();
            pol.services = body.at("services").get<std::set<std::string>>();
            auto id = s_.authz.put_policy(std::move(pol));
            return json_response(200, json{{"policy_id", id}});
        }
        if (n == 2 && m == "DELETE") {
            s_.authz.delete_policy(parts[1]);
            return json_response(200, json{{"deleted", parts[1]}});
        }
    } else if (at(0, "identities") && n == 1 && m == "GET") {
        require_admin(p);
        json out = json::array();
        for (const auto& i : s_.identities.list()) {
            out.push_back(identity_summary(i));
        }
        return json_response(200, out);
    } else if (at(0, "whoami") && n == 1 && m == "GET") {
        json out{{"principal", p.id}, {"subject", p.subject}, {"admin", p.admin}};
        if (p.identity) {
            out["identity"] = identity_summary(*p.identity);
        }
        return json_response(200, out);
    }
    return error_response(404, "NotFound", "no route for " + m + " " + req.path);
}

bool Gateway::allowed(const Principal& p, std::string_view object,
                      std::string_view permission) const {
    return p.admin || s_.authz.check(object, permission, p.subject);
}

void Gateway::require(const Principal& p, std::string_view object,
                      std::string_view permission) const {
    if (!allowed(p, object, permission)) {
        fail(Errc::Forbidden, p.id + " lacks " + std::string(permission) + " on " +
                                  std::string(object));
    }
}

void Gateway::require_admin(const Principal& p) const {
    if (!p.admin) {
        fail(Errc::Forbidden, "admin token required");
    }
}

bool Gateway::can_see_thread(const Principal& p, const std::string& thread_id) const {
    return !thread_id.empty() && allowed(p, "thread:" + thread_id, "read");
}

HttpResponse Gateway::create_thread(const Principal& p, const HttpRequest& req) {
    auto body = parse_body(req);
    auto agent_id = required_string(body, "agent_id");
    require(p, "agent:" + agent_id, "create_thread");
    if (!s_.registry.find_definition(agent_id)) {
        fail(Errc::NotFound, "agent '" + agent_id + "' not found");
    }
    auto t = s_.threads.create_thread(body.value("thread_id", ""), agent_id, p.subject);
    if (p.subject.rfind("user:", 0) == 0 || p.subject.rfind("agent:", 0) == 0) {
        s_.authz.grant_defaults_on_thread_create(t.thread_id, p.subject, agent_id);
    } else {
        s_.authz.write_tuple({"thread:" + t.thread_id, "participant", "agent:" + agent_id});
    }
    return json_response(201, threads::to_json(t));
}

HttpResponse Gateway::list_threads(const Principal& p) {
    json out = json::array();
    for (const auto& t : s_.threads.list_threads()) {
        if (can_see_thread(p, t.thread_id)) {
            out.push_back(threads::to_json(t));
        }
    }
    return json_response(200, out);
}

HttpResponse Gateway::get_messages(const Principal& p, const HttpRequest& req,
                                   const std::string& id) {
    require(p, "thread:" + id, "read");
    if (!s_.threads.find_thread(id)) {
        fail(Errc::NotFound, "thread '" + id + "' not found");
    }
    std::size_t limit = 0;
    if (auto it = req.query.find("limit"); it != req.query.end()) {
        limit = *parse_uint(it->second, "limit");
    }
    json out = json::array();
    for (const auto& msg : s_.threads.messages(id, limit)) {
        out.push_back(threads::to_json(msg));
    }
    return json_response(200, out);
}

HttpResponse Gateway::post_message(const Principal& p, const HttpRequest& req,
                                   const std::string& id) {
    require(p, "thread:" + id, "post");
    auto thread = s_.threads.find_thread(id);
    if (!thread) {
        fail(Errc::NotFound, "thread '" + id + "' not found");
    }
    auto body = parse_body(req);
    auto text = body.at("text").get<std::string>();
    auto reply_to = body.value("in_reply_to", "");
    auto kind = author_kind(p);
    auto msg = s_.threads.append_message(id, p.subject, kind, text, reply_to);
    s_.bus.publish(events::kThreadMessage, json{{"thread_id", id},
                                                {"agent_id", thread->agent_id},
                                                {"message_id", msg.message_id},
                                                {"seq", msg.seq},
                                                {"author", msg.author},
                                                {"author_kind", msg.author_kind},
                                                {"text", msg.text},
                                                {"in_reply_to", msg.in_reply_to},
                                                {"ts", msg.ts.count()}});
    return json_response(200, threads::to_json(msg));
}

HttpResponse Gateway::put_agent(const Principal& p, const HttpRequest& req, const std::string& id) {
    auto body = parse_body(req);
    if (!body.is_object()) {
        fail(Errc::ValidationError, "agent definition must be a JSON object");
    }
    if (auto it = body.find("agent_id"); it != body.end() && *it != id) {
        fail(Errc::ValidationError, "agent_id in body does not match the path");
    }
    body["agent_id"] = id;
    body.erase("revision");
    auto def = registry::definition_from_json(body);
    auto expected = parse_uint(req.header("if-match"), "If-Match");

    auto existing = s_.registry.find_definition(id);
    if (existing) {
        require(p, "agent:" + id, "configure");
        auto rev = s_.registry.put_definition(std::move(def), expected);
        return json_response(200, json{{"agent_id", id}, {"revision", rev}});
    }
    if (p.kind != Principal::Kind::User) {
        fail(Errc::Forbidden, "only users can create agents");
    }
    // Create-only: a concurrent creator loses with a version conflict.
    auto rev = s_.registry.put_definition(std::move(def), expected.value_or(0));
    s_.authz.write_tuple({"agent:" + id, "owner", p.subject});
    return json_response(201, json{{"agent_id", id}, {"revision", rev}});
}

HttpResponse Gateway::delete_agent(const Principal& p, const HttpRequest& req,
                                   const std::string& id) {
    require(p, "agent:" + id, "delete");
    auto expected = parse_uint(req.header("if-match"), "If-Match");
    s_.registry.delete_definition(id, expected);
    for (const auto& t : s_.authz.tuples()) {
        if (t.object == "agent:" + id) {
            s_.authz.delete_tuple(t);
        }
    }
    return json_response(200, json{{"agent_id", id}, {"deleted", true}});
}

HttpResponse Gateway::keepalive(const Principal& p, const std::string& instance_id) {
    if (!p.identity || p.identity->identity_class != IdentityClass::EphemeralWorkload ||
        p.identity->subject != instance_id) {
        fail(Errc::Forbidden, p.id + " may not keep " + instance_id + " alive");
    }
    if (s_.orchestrator == nullptr) {
        return error_response(503, "Unavailable", "orchestrator not attached");
    }
    auto now = s_.clock.now();
    s_.orchestrator->record_keepalive(instance_id, now);
    return json_response(200, json{{"instance_id", instance_id}, {"ts", now.count()}});
}

HttpResponse Gateway::put_secret(const Principal& p, const HttpRequest& req) {
    auto body = parse_body(req);
    auto name = required_string(body, "name");
    auto value = body.at("value").get<std::string>();
    auto owner = body.value("owner_agent", "");
    if (!p.admin) {
        if (owner.empty()) {
            fail(Errc::Forbidden, "secrets without an owning agent need an admin token");
        }
        require(p, "agent:" + owner, "configure");
        if (auto cur = s_.registry.secret_info(name); cur && cur->owner_agent != owner) {
            if (cur->owner_agent.empty()) {
                fail(Errc::Forbidden, "secret '" + name + "' is admin managed");
            }
            require(p, "agent:" + cur->owner_agent, "configure");
        }
    }
    s_.registry.put_secret(name, value, owner);
    return json_response(200, json{{"name", name}, {"owner_agent", owner}});
}

HttpResponse Gateway::delete_secret(const Principal& p, const std::string& name) {
    auto info = s_.registry.secret_info(name);
    if (!info) {
        fail(Errc::NotFound, "secret '" + name + "' not found");
    }
    if (!p.admin) {
        if (info->owner_agent.empty()) {
            fail(Errc::Forbidden, "secret '" + name + "' is admin managed");
        }
        require(p, "agent:" + info->owner_agent, "configure");
    }
    s_.registry.delete_secret(name);
    return json_response(200, json{{"name", name}, {"deleted", true}});
}

HttpResponse Gateway::compare_secret(const Principal& p, const HttpRequest& req) {
    auto body = parse_body(req);
    auto name = required_string(body, "name");
    auto value = body.at("value").get<std::string>();
    auto info = s_.registry.secret_info(name);
    if (!p.admin) {
        if (!info || info->owner_agent.empty()) {
            fail(Errc::Forbidden, "comparing '" + name + "' needs an admin token");
        }
        require(p, "agent:" + info->owner_agent, "configure");
    }
    bool exists = info.has_value();
    bool matches = exists && s_.registry.secret_matches(name, value);
    return json_response(200, json{{"name", name},
                                   {"exists", exists},
                                   {"matches", matches},
                                   {"owner_agent", exists ? info->owner_agent : ""}});
}

HttpResponse Gateway::dial(const Principal& p, const HttpRequest& req, const std::string& service) {
    if (!p.identity) {
        fail(Errc::Forbidden, "dials require an overlay identity");
    }
    if (!s_.authz.dial_allowed(*p.identity, service)) {
        fail(Errc::Forbidden, p.id + " may not dial " + service);
    }
    ServiceHandler handler;
    {
        std::lock_guard lock(mutex_);
        if (auto it = services_.find(service); it != services_.end()) {
            handler = it->second;
        }
    }
    if (!handler) {
        fail(Errc::NotFound, "service '" + service + "' is not registered");
    }
    HttpRequest internal = req;
    internal.headers.erase(std::string(kTokenHeader));
    internal.headers.erase("authorization");
    internal.set_header(kIdentityHeader, p.id);
    return handler(internal);
}

HttpResponse Gateway::event_stream(const Principal& p, const HttpRequest& req) {
    std::vector<std::string> topics;
    auto topics_param = req.query.count("topics") != 0
                            ? req.query.at("topics")
                            : std::string(events::kInstanceState) + "," +
                                  std::string(events::kThreadMessage);
    std::stringstream ss(topics_param);
    for (std::string t; std::getline(ss, t, ',');) {
        if (!events::known_topic(t)) {
            fail(Errc::InvalidArgument, "unknown topic '" + t + "'");
        }
        if (t == events::kIdentityChange) {
            require_admin(p);
        }
        topics.push_back(t);
    }
    std::uint64_t max_events = 0;
    std::uint64_t timeout_ms = 0;
    if (auto it = req.query.find("max_events"); it != req.query.end()) {
        max_events = *parse_uint(it->second, "max_events");
    }
    if (auto it = req.query.find("timeout_ms"); it != req.query.end()) {
        timeout_ms = *parse_uint(it->second, "timeout_ms");
    }

    // Subscribe before answering so nothing published after the request is missed.
    auto group = crypto::random_id("sse");
    auto subs = std::make_shared<std::vector<events::Subscription>>();
    for (const auto& t : topics) {
        subs->push_back(s_.bus.subscribe(t, group, events::StartAt::Latest));
    }

    HttpResponse r;
    r.content_type = "text/event-stream";
    r.stream = [this, p, subs, group, topics, max_events, timeout_ms](const StreamSink& sink) {
        using clock = std::chrono::steady_clock;
        auto started = clock::now();
        auto last_write = started;
        std::uint64_t sent = 0;
        auto done = [&] {
            for (const auto& t : topics) {
                s_.bus.drop_group(t, group);
            }
        };
        if (!sink(": stream open\n\n")) {
            return done();
        }
        while (!shutdown_) {
            bool any = false;
            for (auto& sub : *subs) {
                while (auto e = sub.poll()) {
                    sub.ack(e->id);
                    any = true;
                    auto thread_id = e->payload.value("thread_id", "");
                    bool visible = p.admin || e->topic == events::kConfigApplied ||
                                   can_see_thread(p, thread_id);
                    if (!visible) {
                        continue;
                    }
                    json data = e->payload;
                    data["event_id"] = e->id;
                    std::string frame = "event: " + e->topic + "\ndata: " + data.dump() + "\n\n";
                    if (!sink(frame)) {
                        return done();
                    }
                    last_write = clock::now();
                    if (max_events != 0 && ++sent >= max_events) {
                        return done();
                    }
                }
            }
            auto now = clock::now();
            if (timeout_ms != 0 && now - started >= std::chrono::milliseconds(timeout_ms)) {
                return done();
            }
            if (!any) {
                if (now - last_write > std::chrono::seconds(15)) {
                    if (!sink(": ping\n\n")) {
                        return done();
                    }
                    last_write = now;
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(20));
            }
        }
        done();
    };
    return r;
}

HttpResponse Gateway::write_tuple(const Principal& p, const HttpRequest& req, bool erase) {
    auto body = parse_body(req);
    authz::RelationTuple t;
    if (body.contains("tuple")) {
        t = authz::RelationTuple::parse(body.at("tuple").get<std::string>());
    } else {
        t = {required_string(body, "object"), required_string(body, "relation"),
             required_string(body, "subject")};
    }
    authz::validate_tuple(t);
    if (!p.admin) {
        auto type = authz::type_of(t.object);
        auto name = t.object.substr(type.size() + 1);
        if (type == "agent") {
            // Role grants on an agent belong to its owners.
            require(p, t.object, "delete");
        } else {
            auto thread = s_.threads.find_thread(name);
            if (!thread) {
                fail(Errc::NotFound, "thread '" + name + "' not found");
            }
            require(p, "agent:" + thread->agent_id, "configure");
        }
    }
    if (erase) {
        s_.authz.delete_tuple(t);
    } else {
        s_.authz.write_tuple(t);
    }
    return json_response(200, json{{"tuple", t.to_string()}, {"deleted", erase}});
}

HttpResponse Gateway::check_tuple(const Principal& p, const HttpRequest& req) {
    auto body = parse_body(req);
    std::string object;
    std::string permission;
    std::string subject;
    if (body.contains("tuple")) {
        auto t = authz::RelationTuple::parse(body.at("tuple").get<std::string>());
        object = t.object;
        permission = t.relation;
        subject = t.subject;
    } else {
        object = required_string(body, "object");
        permission = required_string(body, "permission");
        subject = required_string(body, "subject");
    }
    if (!p.admin && subject != p.subject) {
        fail(Errc::Forbidden, "only admins may check other subjects");
    }
    bool ok = s_.authz.check(object, permission, subject);
    return json_response(200, json{{"object", object},
                                   {"permission", permission},
                                   {"subject", subject},
                                   {"allowed", ok}});
}

HttpServer::HttpServer(Gateway& gateway, std::string host, int port, std::size_t threads)
    : gateway_(gateway),
      host_(std::move(host)),
      port_(port),
      threads_(threads),
      server_(std::make_unique<httplib::Server>()) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start() {
    auto pool = threads_;
    server_->new_task_queue = [pool] { return new httplib::ThreadPool(pool); };
    auto handler = [this](const httplib::Request& in, httplib::Response& res) {
        HttpRequest req;
        req.method = in.method;
        req.path = in.path;
        req.body = in.body;
        for (const auto& [k, v] : in.headers) {
            req.set_header(k, v);
        }
        for (const auto& [k, v] : in.params) {
            req.query[k] = v;
        }
        auto out = gateway_.handle(std::move(req));
        res.status = out.status;
        if (out.stream) {
            res.set_header("Cache-Control", "no-cache");
            auto fn = std::make_shared<std::function<void(const StreamSink&)>>(std::move(out.stream));
            res.set_chunked_content_provider(
                out.content_type, [fn](std::size_t, httplib::DataSink& sink) {
                    (*fn)([&sink](std::string_view chunk) {
                        return sink.is_writable() && sink.write(chunk.data(), chunk.size());
                    });
                    sink.done();
                    return true;
                });
        } else {
            res.set_content(out.body, out.content_type);
        }
    };
    server_->Get(".*", handler);
    server_->Post(".*", handler);
    server_->Put(".*", handler);
    server_->Delete(".*", handler);

    if (port_ == 0) {
        port_ = server_->bind_to_any_port(host_);
    } else if (!server_->bind_to_port(host_, port_)) {
        port_ = -1;
    }
    if (port_ <= 0) {
        fail(Errc::InvalidArgument, "cannot bind " + host_);
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
}

void HttpServer::stop() {
    if (!thread_.joinable()) {
        return;
    }
    // Open event streams would otherwise hold worker threads forever.
    gateway_.shutdown();
    server_->stop();
    thread_.join();
}

std::string HttpServer::base_url() const {
    return "http://" + host_ + ":" + std::to_string(port_);
}

InProcessTransport::InProcessTransport(Gateway& gateway, HeaderMap default_headers)
    : gateway_(gateway), defaults_(std::move(default_headers)) {}

HttpResponse InProcessTransport::call(const HttpRequest& request) {
    HttpRequest req = request;
    for (const auto& [k, v] : defaults_) {
        if (req.header(k).empty()) {
            req.set_header(k, v);
        }
    }
    auto out = gateway_.handle(std::move(req));
    if (out.stream) {
        auto stream = std::move(out.stream);
        out.stream = nullptr;
        stream([&out](std::string_view chunk) {
            out.body.append(chunk);
            return true;
        });
    }
    return out;
}

HttpClientTransport::HttpClientTransport(std::string base_url, HeaderMap default_headers)
    : base_url_(std::move(base_url)), defaults_(std::move(default_headers)) {}

namespace {

std::string target_of(const HttpRequest& req) {
    if (req.query.empty()) {
        return req.path;
    }
    httplib::Params params(req.query.begin(), req.query.end());
    return req.path + "?" + httplib::detail::params_to_query_str(params);
}

httplib::Headers headers_of(const HeaderMap& defaults, const HttpRequest& req) {
    httplib::Headers h;
    for (const auto& [k, v] : defaults) {
        if (req.headers.count(lower(k)) == 0) {
            h.emplace(k, v);
        }
    }
    for (const auto& [k, v] : req.headers) {
        h.emplace(k, v);
    }
    return h;
}

} // namespace

HttpResponse HttpClientTransport::call(const HttpRequest& request) {
    httplib::Client cli(base_url_);
    cli.set_connection_timeout(std::chrono::seconds(5));
    cli.set_read_timeout(std::chrono::seconds(60));
    auto target = target_of(request);
    auto headers = headers_of(defaults_, request);
    httplib::Result res;
    const auto& m = request.method;
    if (m == "GET") {
        res = cli.Get(target, headers);
    } else if (m == "POST") {
        res = cli.Post(target, headers, request.body, "application/json");
    } else if (m == "PUT") {
        res = cli.Put(target, headers, request.body, "application/json");
    } else if (m == "DELETE") {
        res = cli.Delete(target, headers, request.body, "application/json");
    } else {
        fail(Errc::InvalidArgument, "unsupported method " + m);
    }
    if (!res) {
        fail(Errc::RunnerUnavailable,
             "cannot reach " + base_url_ + ": " + httplib::to_string(res.error()));
    }
    HttpResponse out;
    out.status = res->status;
    out.body = res->body;
    out.content_type = res->get_header_value("Content-Type");
    return out;
}

int HttpClientTransport::stream(const HttpRequest& request, const StreamSink& sink) {
    httplib::Client cli(base_url_);
    cli.set_connection_timeout(std::chrono::seconds(5));
    cli.set_read_timeout(std::chrono::hours(24));
    int status = 0;
    auto res = cli.Get(
        target_of(request), headers_of(defaults_, request),
        [&status](const httplib::Response& r) {
            status = r.status;
            return true;
        },
        [&sink](const char* data, std::size_t len) { return sink(std::string_view(data, len)); });
    if (!res && res.error() != httplib::Error::Canceled) {
        fail(Errc::RunnerUnavailable,
             "cannot reach " + base_url_ + ": " + httplib::to_string(res.error()));
    }
    return status;
}

HeaderMap bearer(std::string_view token) {
    return HeaderMap{{"authorization", "Bearer " + std::string(token)}};
}

HeaderMap identity_token(std::string_view credential) {
    return HeaderMap{{std::string(kTokenHeader), std::string(credential)}};
}

} // namespace agynlite::gateway
