#include "agynlite/configctl.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "agynlite/error.hpp"

namespace agynlite::configctl {

using nlohmann::json;
using registry::AgentDefinition;

namespace {

[[noreturn]] void schema_error(const std::string& where, const std::string& msg) {
    fail(Errc::SchemaError, where + ": " + msg);
}

json parse_document(const SourceFile& file) {
    try {
        return json::parse(file.text);
    } catch (const json::parse_error& e) {
        // e.byte is the 1-based offset of the offending character.
        std::size_t offset = e.byte == 0 ? 0 : std::min<std::size_t>(e.byte - 1, file.text.size());
        std::size_t line = 1;
        std::size_t col = 1;
        for (std::size_t i = 0; i < offset; ++i) {
            if (file.text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        fail(Errc::ParseError, file.name + ":" + std::to_string(line) + ":" + std::to_string(col) +
                                   ": " + e.what());
    }
}

void check_keys(const json& doc, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
    if (!doc.is_object()) {
        schema_error(where, "expected an object");
    }
    for (const auto& [k, _] : doc.items()) {
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
            schema_error(where, "unknown field '" + k + "'");
        }
    }
}

struct Located {
    std::string file;
    json doc;
};

void append_array(json& doc, const char* field, const json& extra) {
    if (!doc.contains(field)) {
        doc[field] = json::array();
    }
    for (const auto& e : extra) {
        doc[field].push_back(e);
    }
}

std::string show(const json& v) {
    if (v.is_null()) {
        return "(absent)";
    }
    return v.dump();
}

void diff_into(const json& before, const json& after, const std::string& path,
               std::vector<FieldChange>& out) {
    if (before.is_object() && after.is_object()) {
        std::set<std::string> keys;
        for (const auto& [k, _] : before.items()) {
            keys.insert(k);
        }
        for (const auto& [k, _] : after.items()) {
            keys.insert(k);
        }
        for (const auto& k : keys) {
            auto sub = path.empty() ? k : path + "." + k;
            diff_into(before.contains(k) ? before.at(k) : json(nullptr),
                      after.contains(k) ? after.at(k) : json(nullptr), sub, out);
        }
        return;
    }
    if (before != after) {
        out.push_back(FieldChange{path, before, after});
    }
}

ActionOutcome outcome_for(const Action& a, std::string status) {
    ActionOutcome o;
    o.kind = a.kind;
    o.resource = a.resource;
    o.name = a.name;
    o.status = std::move(status);
    return o;
}

} // namespace

DesiredState parse(const std::vector<SourceFile>& files) {
    std::map<std::string, Located> modules;
    std::map<std::string, Located> agents;
    std::map<std::string, Located> secrets;

    for (const auto& file : files) {
        auto doc = parse_document(file);
        check_keys(doc, {"agents", "secrets", "modules"}, file.name);
        auto collect = [&](const char* section, std::map<std::string, Located>& into) {
            if (!doc.contains(section)) {
                return;
            }
            const auto& items = doc.at(section);
            if (!items.is_object()) {
                schema_error(file.name, std::string("'") + section + "' must be an object");
            }
            for (const auto& [name, body] : items.items()) {
                auto [it, fresh] = into.emplace(name, Located{file.name, body});
                if (!fresh) {
                    schema_error(file.name, std::string(section) + " entry '" + name +
                                                "' is already declared in " + it->second.file);
                }
            }
        };
        collect("modules", modules);
        collect("agents", agents);
        collect("secrets", secrets);
    }

    for (const auto& [name, m] : modules) {
        check_keys(m.doc, {"description", "sidecars", "secret_bindings", "volumes"},
                   m.file + ": module '" + name + "'");
    }

    DesiredState out;
    for (const auto& [id, a] : agents) {
        auto where = a.file + ": agent '" + id + "'";
        if (!a.doc.is_object()) {
            schema_error(where, "expected an object");
        }
        json doc = a.doc;
        if (auto it = doc.find("agent_id"); it != doc.end() && *it != id) {
            schema_error(where, "agent_id does not match its key");
        }
        if (doc.contains("revision")) {
            schema_error(where, "revision is assigned by the registry");
        }
        doc["agent_id"] = id;
        std::vector<std::string> uses;
        if (auto it = doc.find("use"); it != doc.end()) {
            if (!it->is_array()) {
                schema_error(where, "'use' must be a list of module names");
            }
            for (const auto& u : *it) {
                if (!u.is_string()) {
                    schema_error(where, "'use' must be a list of module names");
                }
                uses.push_back(u.get<std::string>());
            }
            doc.erase("use");
        }
        for (const auto& u : uses) {
            auto m = modules.find(u);
            if (m == modules.end()) {
                fail(Errc::UnknownModule, where + ": module '" + u + "' is not declared");
            }
            for (const char* field : {"sidecars", "secret_bindings", "volumes"}) {
                if (m->second.doc.contains(field)) {
                    append_array(doc, field, m->second.doc.at(field));
                }
            }
        }
        try {
            auto def = registry::definition_from_json(doc);
            registry::validate(def);
            out.agents.emplace(id, std::move(def));
        } catch (const Error& e) {
            if (e.code() != Errc::ValidationError) {
                throw;
            }
            schema_error(where, e.what());
        }
    }

    for (const auto& [name, s] : secrets) {
        auto where = s.file + ": secret '" + name + "'";
        check_keys(s.doc, {"value", "env", "owner_agent"}, where);
        if (!registry::valid_name(name)) {
            schema_error(where, "invalid secret name");
        }
        DesiredSecret ds;
        ds.name = name;
        ds.owner_agent = s.doc.value("owner_agent", "");
        bool has_value = s.doc.contains("value");
        bool has_env = s.doc.contains("env");
        if (has_value == has_env) {
            schema_error(where, "give exactly one of 'value' or 'env'");
        }
        if (has_value) {
            if (!s.doc.at("value").is_string()) {
                schema_error(where, "'value' must be a string");
            }
            ds.value = s.doc.at("value").get<std::string>();
        } else {
            auto var = s.doc.at("env").get<std::string>();
            const char* v = std::getenv(var.c_str());
            if (v == nullptr) {
                schema_error(where, "environment variable " + var + " is not set");
            }
            ds.value = v;
        }
        out.secrets.emplace(name, std::move(ds));
    }
    return out;
}

DesiredState parse_path(const std::filesystem::path& path) {
    std::vector<std::filesystem::path> paths;
    if (std::filesystem::is_directory(path)) {
        for (const auto& entry : std::filesystem::directory_iterator(path)) {
            if (entry.is_regular_file() && entry.path().extension() == ".json") {
                paths.push_back(entry.path());
            }
        }
        std::sort(paths.begin(), paths.end());
    } else if (std::filesystem::exists(path)) {
        paths.push_back(path);
    } else {
        fail(Errc::NotFound, path.string() + " does not exist");
    }
    std::vector<SourceFile> files;
    for (const auto& p : paths) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        files.push_back(SourceFile{p.string(), ss.str()});
    }
    return parse(files);
}

std::string_view to_string(ActionKind k) {
    switch (k) {
    case ActionKind::Create: return "create";
    case ActionKind::Update: return "update";
    case ActionKind::Delete: return "delete";
    }
    return "";
}

std::string_view to_string(ResourceKind k) {
    return k == ResourceKind::Agent ? "agent" : "secret";
}

std::size_t Plan::blocked() const {
    return static_cast<std::size_t>(
        std::count_if(actions.begin(), actions.end(), [](const Action& a) { return a.blocked; }));
}

std::vector<FieldChange> diff(const json& before, const json& after) {
    std::vector<FieldChange> out;
    diff_into(before, after, "", out);
    return out;
}

Plan plan(const DesiredState& desired, const LiveState& live, PlanOptions options) {
    Plan p;
    const json sensitive = std::string(kSensitive);

    for (const auto& [name, s] : desired.secrets) {
        Action a;
        a.resource = ResourceKind::Secret;
        a.name = name;
        a.secret = s;
        auto it = live.secrets.find(name);
        if (it == live.secrets.end()) {
            a.kind = ActionKind::Create;
            a.changes.push_back({"value", nullptr, sensitive});
            if (!s.owner_agent.empty()) {
                a.changes.push_back({"owner_agent", nullptr, s.owner_agent});
            }
        } else {
            a.kind = ActionKind::Update;
            a.stamp = {0, true, it->second.value_matches, it->second.owner_agent};
            if (!it->second.value_matches) {
                a.changes.push_back({"value", sensitive, sensitive});
            }
            if (it->second.owner_agent != s.owner_agent) {
                a.changes.push_back({"owner_agent", it->second.owner_agent, s.owner_agent});
            }
            if (a.changes.empty()) {
                continue;
            }
        }
        p.actions.push_back(std::move(a));
    }

    for (const auto& [id, def] : desired.agents) {
        Action a;
        a.resource = ResourceKind::Agent;
        a.name = id;
        a.agent = def;
        auto after = registry::to_json(def, false);
        auto it = live.agents.find(id);
        if (it == live.agents.end()) {
            a.kind = ActionKind::Create;
            a.changes = diff(json::object(), after);
        } else {
            a.kind = ActionKind::Update;
            a.stamp.revision = it->second.revision;
            a.changes = diff(registry::to_json(it->second, false), after);
            if (a.changes.empty()) {
                continue;
            }
        }
        p.actions.push_back(std::move(a));
    }

    for (const auto& [id, def] : live.agents) {
        if (desired.agents.count(id) != 0) {
            continue;
        }
        Action a;
        a.kind = ActionKind::Delete;
        a.resource = ResourceKind::Agent;
        a.name = id;
        a.blocked = !options.allow_delete;
        a.stamp.revision = def.revision;
        a.changes = diff(registry::to_json(def, false), json::object());
        p.actions.push_back(std::move(a));
    }

    for (const auto& [name, s] : live.secrets) {
        if (desired.secrets.count(name) != 0) {
            continue;
        }
        Action a;
        a.kind = ActionKind::Delete;
        a.resource = ResourceKind::Secret;
        a.name = name;
        a.blocked = !options.allow_delete;
        a.stamp = {0, true, false, s.owner_agent};
        a.changes.push_back({"value", sensitive, nullptr});
        p.actions.push_back(std::move(a));
    }
    return p;
}

std::string render_text(const Plan& plan) {
    if (plan.empty()) {
        return "No changes. Live state matches the definitions.\n";
    }
    std::ostringstream os;
    std::size_t creates = 0;
    std::size_t updates = 0;
    std::size_t deletes = 0;
    for (const auto& a : plan.actions) {
        char mark = a.kind == ActionKind::Create ? '+' : a.kind == ActionKind::Update ? '~' : '-';
        os << mark << " " << to_string(a.kind) << " " << to_string(a.resource) << " " << a.name;
        if (a.resource == ResourceKind::Agent && a.kind != ActionKind::Create) {
            os << " (revision " << a.stamp.revision << ")";
        }
        if (a.blocked) {
            os << " [blocked: pass --allow-delete]";
        }
        os << "\n";
        for (const auto& c : a.changes) {
            os << "    " << c.path << ": " << show(c.before) << " -> " << show(c.after) << "\n";
        }
        switch (a.kind) {
        case ActionKind::Create: ++creates; break;
        case ActionKind::Update: ++updates; break;
        case ActionKind::Delete: ++deletes; break;
        }
    }
    os << "Plan: " << creates << " to create, " << updates << " to update, " << deletes
       << " to delete";
    if (plan.blocked() != 0) {
        os << " (" << plan.blocked() << " blocked)";
    }
    os << ".\n";
    return os.str();
}

json render_json(const Plan& plan) {
    json actions = json::array();
    for (const auto& a : plan.actions) {
        json changes = json::array();
        for (const auto& c : a.changes) {
            changes.push_back(json{{"path", c.path}, {"before", c.before}, {"after", c.after}});
        }
        json stamp = a.resource == ResourceKind::Agent
                         ? json{{"revision", a.stamp.revision}}
                         : json{{"exists", a.stamp.exists},
                                {"value_matches", a.stamp.value_matches},
                                {"owner_agent", a.stamp.owner_agent}};
        actions.push_back(json{{"action", to_string(a.kind)},
                               {"resource", to_string(a.resource)},
                               {"name", a.name},
                               {"blocked", a.blocked},
                               {"stamp", stamp},
                               {"changes", changes}});
    }
    return json{{"actions", actions}, {"blocked", plan.blocked()}};
}

json Client::request(const std::string& method, const std::string& path, const json& body,
                     HeaderMap headers, std::map<std::string, std::string> query) {
    HttpRequest req;
    req.method = method;
    req.path = path;
    req.query = std::move(query);
    for (auto& [k, v] : headers) {
        req.set_header(k, std::move(v));
    }
    if (!body.is_null()) {
        req.body = body.dump();
        req.set_header("content-type", "application/json");
    }
    auto res = transport_.call(req);
    json doc;
    if (!res.body.empty()) {
        try {
            doc = json::parse(res.body);
        } catch (const json::parse_error&) {
            doc = res.body;
        }
    }
    if (res.status < 200 || res.status >= 300) {
        std::string code = doc.is_object() ? doc.value("code", "Error") : "Error";
        std::string message = doc.is_object() ? doc.value("message", "") : res.body;
        throw ApiError(res.status, code,
                       method + " " + path + " -> " + std::to_string(res.status) + " " + code +
                           (message.empty() ? "" : ": " + message));
    }
    return doc;
}

std::vector<AgentDefinition> Client::list_agents() {
    std::vector<AgentDefinition> out;
    for (const auto& d : request("GET", "/agents")) {
        out.push_back(registry::definition_from_json(d));
    }
    return out;
}

std::optional<AgentDefinition> Client::find_agent(const std::string& agent_id) {
    try {
        return registry::definition_from_json(request("GET", "/agents/" + agent_id));
    } catch (const ApiError& e) {
        if (e.status() == 404) {
            return std::nullopt;
        }
        throw;
    }
}

std::uint64_t Client::put_agent(const AgentDefinition& def, std::optional<std::uint64_t> if_match) {
    HeaderMap h;
    if (if_match) {
        h["if-match"] = std::to_string(*if_match);
    }
    auto res = request("PUT", "/agents/" + def.agent_id, registry::to_json(def, false), h);
    return res.at("revision").get<std::uint64_t>();
}

void Client::delete_agent(const std::string& agent_id, std::optional<std::uint64_t> if_match) {
    HeaderMap h;
    if (if_match) {
        h["if-match"] = std::to_string(*if_match);
    }
    request("DELETE", "/agents/" + agent_id, nullptr, h);
}

json Client::list_secrets() { return request("GET", "/secrets"); }

json Client::compare_secret(const std::string& name, const std::string& value) {
    return request("POST", "/secrets/compare", json{{"name", name}, {"value", value}});
}

void Client::put_secret(const DesiredSecret& s) {
    json body{{"name", s.name}, {"value", s.value}};
    if (!s.owner_agent.empty()) {
        body["owner_agent"] = s.owner_agent;
    }
    request("POST", "/secrets", body);
}

void Client::delete_secret(const std::string& name) { request("DELETE", "/secrets/" + name); }

LiveState fetch_live(Client& client, const DesiredState& desired) {
    LiveState live;
    for (auto& def : client.list_agents()) {
        auto id = def.agent_id;
        live.agents.emplace(id, std::move(def));
    }
    for (const auto& s : client.list_secrets()) {
        LiveSecret ls;
        ls.name = s.at("name").get<std::string>();
        ls.owner_agent = s.value("owner_agent", "");
        if (auto d = desired.secrets.find(ls.name); d != desired.secrets.end()) {
            ls.value_matches = client.compare_secret(ls.name, d->second.value).value("matches", false);
        }
        live.secrets.emplace(ls.name, std::move(ls));
    }
    return live;
}

ApplyReport apply(Client& client, const Plan& plan) {
    std::optional<json> secrets;
    auto current_secret = [&](const std::string& name) -> std::optional<json> {
        if (!secrets) {
            secrets = client.list_secrets();
        }
        for (const auto& s : *secrets) {
            if (s.at("name") == name) {
                return std::optional<json>(std::in_place, s);
            }
        }
        return std::nullopt;
    };
    for (const auto& a : plan.actions) {
        if (a.blocked) {
            continue;
        }
        auto stale = [&](const std::string& why) {
            fail(Errc::StalePlan, std::string(to_string(a.resource)) + " '" + a.name +
                                      "' changed since the plan was made: " + why);
        };
        if (a.resource == ResourceKind::Agent) {
            auto cur = client.find_agent(a.name);
            std::uint64_t have = cur ? cur->revision : 0;
            if (have != a.stamp.revision) {
                stale("revision " + std::to_string(have) + ", plan expected " +
                      std::to_string(a.stamp.revision));
            }
            continue;
        }
        auto cur = current_secret(a.name);
        VersionStamp now;
        now.exists = cur.has_value();
        if (cur) {
            now.owner_agent = cur->value("owner_agent", "");
            if (a.kind != ActionKind::Delete) {
                now.value_matches =
                    client.compare_secret(a.name, a.secret->value).value("matches", false);
            }
        }
        if (now != a.stamp) {
            stale("secret state moved");
        }
    }

    ApplyReport report;
    for (const auto& a : plan.actions) {
        if (report.halted) {
            report.outcomes.push_back(outcome_for(a, "not_run"));
            continue;
        }
        if (a.blocked) {
            report.outcomes.push_back(outcome_for(a, "skipped"));
            continue;
        }
        auto o = outcome_for(a, "applied");
        try {
            if (a.resource == ResourceKind::Agent) {
                if (a.kind == ActionKind::Delete) {
                    client.delete_agent(a.name, a.stamp.revision);
                } else {
                    o.revision = client.put_agent(*a.agent, a.stamp.revision);
                }
            } else if (a.kind == ActionKind::Delete) {
                client.delete_secret(a.name);
            } else {
                client.put_secret(*a.secret);
            }
        } catch (const ApiError& e) {
            o.status = "failed";
            o.http_status = e.status();
            o.error = e.what();
            report.halted = true;
        }
        report.outcomes.push_back(std::move(o));
    }
    return report;
}

std::string render_report(const ApplyReport& report) {
    std::ostringstream os;
    for (const auto& o : report.outcomes) {
        os << o.status << ": " << to_string(o.kind) << " " << to_string(o.resource) << " "
           << o.name;
        if (o.revision != 0) {
            os << " -> revision " << o.revision;
        }
        if (!o.error.empty()) {
            os << " (" << o.error << ")";
        }
        os << "\n";
    }
    os << (report.halted ? "Apply halted at the first failure.\n" : "Apply complete.\n");
    return os.str();
}

json report_json(const ApplyReport& report) {
    json outcomes = json::array();
    for (const auto& o : report.outcomes) {
        outcomes.push_back(json{{"action", to_string(o.kind)},
                                {"resource", to_string(o.resource)},
                                {"name", o.name},
                                {"status", o.status},
                                {"http_status", o.http_status},
                                {"error", o.error},
                                {"revision", o.revision}});
    }
    return json{{"outcomes", outcomes}, {"halted", report.halted}};
}

} // namespace agynlite::configctl
