#include "agynlite/registry.hpp"

#include <cstdio>
#include <set>

#include "agynlite/error.hpp"

namespace agynlite::registry {

using nlohmann::json;

namespace {

std::string head_key(std::string_view agent_id) { return "agent/" + std::string(agent_id); }

std::string rev_key(std::string_view agent_id, std::uint64_t rev) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%010llu", static_cast<unsigned long long>(rev));
    return "agentrev/" + std::string(agent_id) + "/" + buf;
}

std::string secret_key(std::string_view name) { return "secret/" + std::string(name); }

[[noreturn]] void invalid(const std::string& msg) { fail(Errc::ValidationError, msg); }

json container_json(const ContainerSpec& c) {
    return json{{"name", c.name}, {"image_or_behavior", c.image_or_behavior}, {"env", c.env}};
}

void check_keys(const json& doc, std::initializer_list<std::string_view> allowed,
                std::string_view where) {
    if (!doc.is_object()) {
        invalid(std::string(where) + ": expected an object");
    }
    for (const auto& [k, _] : doc.items()) {
        bool ok = false;
        for (auto a : allowed) {
            ok = ok || a == k;
        }
        if (!ok) {
            invalid(std::string(where) + ": unknown field '" + k + "'");
        }
    }
}

std::string str_field(const json& doc, const char* key, std::string_view where,
                      bool required = true) {
    auto it = doc.find(key);
    if (it == doc.end()) {
        if (required) {
            invalid(std::string(where) + ": missing field '" + key + "'");
        }
        return {};
    }
    if (!it->is_string()) {
        invalid(std::string(where) + ": field '" + key + "' must be a string");
    }
    return it->get<std::string>();
}

ContainerSpec container_from_json(const json& doc, std::string_view where) {
    check_keys(doc, {"name", "image_or_behavior", "env"}, where);
    ContainerSpec c;
    c.name = str_field(doc, "name", where);
    c.image_or_behavior = str_field(doc, "image_or_behavior", where);
    if (auto it = doc.find("env"); it != doc.end()) {
        if (!it->is_object()) {
            invalid(std::string(where) + ": env must be an object");
        }
        for (const auto& [k, v] : it->items()) {
            if (!v.is_string()) {
                invalid(std::string(where) + ": env values must be strings");
            }
            c.env[k] = v.get<std::string>();
        }
    }
    return c;
}

const json& array_field(const json& doc, const char* key, std::string_view where) {
    static const json empty = json::array();
    auto it = doc.find(key);
    if (it == doc.end()) {
        return empty;
    }
    if (!it->is_array()) {
        invalid(std::string(where) + ": field '" + key + "' must be an array");
    }
    return *it;
}

int int_field(const json& doc, const char* key, int fallback) {
    auto it = doc.find(key);
    if (it == doc.end()) {
        return fallback;
    }
    if (!it->is_number_integer()) {
        invalid(std::string("field '") + key + "' must be an integer");
    }
    return it->get<int>();
}

} // namespace

bool valid_name(std::string_view name) {
    if (name.empty() || name.size() > 128) {
        return false;
    }
    for (char c : name) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                  c == '-' || c == '_' || c == '.';
        if (!ok) {
            return false;
        }
    }
    return name != "." && name != "..";
}

json to_json(const AgentDefinition& def, bool include_revision) {
    json sidecars = json::array();
    for (const auto& s : def.sidecars) {
        sidecars.push_back(container_json(s));
    }
    json bindings = json::array();
    for (const auto& b : def.secret_bindings) {
        bindings.push_back(json{{"secret_name", b.secret_name},
                                {"target_container", b.target_container},
                                {"env_var", b.env_var}});
    }
    json volumes = json::array();
    for (const auto& v : def.volumes) {
        volumes.push_back(json{{"name", v.name}, {"mount_path", v.mount_path}});
    }
    json doc{{"agent_id", def.agent_id},
             {"system_prompt", def.system_prompt},
             {"model", def.model},
             {"main_container", container_json(def.main_container)},
             {"sidecars", std::move(sidecars)},
             {"secret_bindings", std::move(bindings)},
             {"volumes", std::move(volumes)},
             {"idle_timeout_s", def.idle_timeout_s},
             {"keepalive_interval_s", def.keepalive_interval_s}};
    if (include_revision) {
        doc["revision"] = def.revision;
    }
    return doc;
}

AgentDefinition definition_from_json(const json& doc) {
    check_keys(doc,
               {"agent_id", "revision", "system_prompt", "model", "main_container", "sidecars",
                "secret_bindings", "volumes", "idle_timeout_s", "keepalive_interval_s"},
               "definition");
    AgentDefinition def;
    def.agent_id = str_field(doc, "agent_id", "definition");
    if (auto it = doc.find("revision"); it != doc.end()) {
        if (!it->is_number_unsigned()) {
            invalid("definition: revision must be a non-negative integer");
        }
        def.revision = it->get<std::uint64_t>();
    }
    def.system_prompt = str_field(doc, "system_prompt", "definition", false);
    def.model = str_field(doc, "model", "definition");
    if (!doc.contains("main_container")) {
        invalid("definition: missing field 'main_container'");
    }
    def.main_container = container_from_json(doc.at("main_container"), "main_container");
    for (const auto& s : array_field(doc, "sidecars", "definition")) {
        def.sidecars.push_back(container_from_json(s, "sidecar"));
    }
    for (const auto& b : array_field(doc, "secret_bindings", "definition")) {
        check_keys(b, {"secret_name", "target_container", "env_var"}, "secret_binding");
        def.secret_bindings.push_back(SecretBinding{str_field(b, "secret_name", "secret_binding"),
                                                    str_field(b, "target_container", "secret_binding"),
                                                    str_field(b, "env_var", "secret_binding")});
    }
    for (const auto& v : array_field(doc, "volumes", "definition")) {
        check_keys(v, {"name", "mount_path"}, "volume");
        def.volumes.push_back(
            VolumeSpec{str_field(v, "name", "volume"), str_field(v, "mount_path", "volume")});
    }
    def.idle_timeout_s = int_field(doc, "idle_timeout_s", kDefaultIdleTimeoutS);
    def.keepalive_interval_s = int_field(doc, "keepalive_interval_s", kDefaultKeepaliveIntervalS);
    return def;
}

void validate(const AgentDefinition& def) {
    if (!valid_name(def.agent_id)) {
        invalid("invalid agent_id '" + def.agent_id + "'");
    }
    if (def.model.empty()) {
        invalid("model must not be empty");
    }
    if (def.idle_timeout_s < 1 || def.keepalive_interval_s < 1) {
        invalid("idle_timeout_s and keepalive_interval_s must be >= 1");
    }
    std::set<std::string> containers;
    auto add_container = [&](const ContainerSpec& c) {
        if (!valid_name(c.name)) {
            invalid("invalid container name '" + c.name + "'");
        }
        if (c.image_or_behavior.empty()) {
            invalid("container '" + c.name + "' has no image_or_behavior");
        }
        if (!containers.insert(c.name).second) {
            invalid("duplicate container name '" + c.name + "'");
        }
    };
    add_container(def.main_container);
    for (const auto& s : def.sidecars) {
        add_container(s);
    }

    std::set<std::string> volume_names;
    std::set<std::string> mount_paths;
    for (const auto& v : def.volumes) {
        if (!valid_name(v.name)) {
            invalid("invalid volume name '" + v.name + "'");
        }
        if (v.mount_path.empty() || v.mount_path.front() != '/') {
            invalid("mount path of volume '" + v.name + "' must be absolute");
        }
        if (!volume_names.insert(v.name).second) {
            invalid("duplicate volume name '" + v.name + "'");
        }
        if (!mount_paths.insert(v.mount_path).second) {
            invalid("duplicate mount path '" + v.mount_path + "'");
        }
    }

    std::set<std::pair<std::string, std::string>> targets;
    for (const auto& b : def.secret_bindings) {
        if (!valid_name(b.secret_name)) {
            invalid("invalid secret name '" + b.secret_name + "'");
        }
        if (containers.count(b.target_container) == 0) {
            invalid("secret binding '" + b.secret_name + "' targets undeclared container '" +
                    b.target_container + "'");
        }
        if (b.env_var.empty()) {
            invalid("secret binding '" + b.secret_name + "' has an empty env_var");
        }
        if (!targets.emplace(b.target_container, b.env_var).second) {
            invalid("env var '" + b.env_var + "' bound twice in container '" +
                    b.target_container + "'");
        }
    }
}

Registry::Registry(store::Store& store, events::Bus& bus, const crypto::Key& sealing_key)
    : store_(store), bus_(bus), sealing_key_(sealing_key) {}

std::uint64_t Registry::put_definition(AgentDefinition def,
                                       std::optional<std::uint64_t> expected_revision) {
    validate(def);
    auto key = head_key(def.agent_id);
    std::uint64_t revision = 0;
    for (;;) {
        auto current = store_.get(key);
        std::uint64_t have = current ? current->version : 0;
        if (expected_revision && *expected_revision != have) {
            fail(Errc::VersionConflict, "agent '" + def.agent_id + "' is at revision " +
                                            std::to_string(have) + ", expected " +
                                            std::to_string(*expected_revision));
        }
        def.revision = have + 1;
        try {
            revision = store_.put(key, to_json(def).dump(), have);
            break;
        } catch (const Error& e) {
            if (e.code() != Errc::VersionConflict) {
                throw;
            }
        }
    }
    store_.put(rev_key(def.agent_id, revision), to_json(def).dump());
    bus_.publish(events::kConfigApplied, json{{"agent_id", def.agent_id}, {"revision", revision}});
    return revision;
}

AgentDefinition Registry::get_definition(std::string_view agent_id,
                                         std::optional<std::uint64_t> revision) const {
    auto head = store_.get(head_key(agent_id));
    if (!head) {
        fail(Errc::NotFound, "agent '" + std::string(agent_id) + "' not found");
    }
    if (!revision || *revision == head->version) {
        return definition_from_json(json::parse(head->value));
    }
    auto old = store_.get(rev_key(agent_id, *revision));
    if (!old) {
        fail(Errc::NotFound, "agent '" + std::string(agent_id) + "' has no revision " +
                                 std::to_string(*revision));
    }
    return definition_from_json(json::parse(old->value));
}

std::optional<AgentDefinition> Registry::find_definition(std::string_view agent_id) const {
    auto head = store_.get(head_key(agent_id));
    if (!head) {
        return std::nullopt;
    }
    return definition_from_json(json::parse(head->value));
}

std::vector<AgentDefinition> Registry::list_definitions() const {
    std::vector<AgentDefinition> out;
    for (const auto& rec : store_.scan("agent/")) {
        out.push_back(definition_from_json(json::parse(rec.value)));
    }
    return out;
}

void Registry::delete_definition(std::string_view agent_id,
                                 std::optional<std::uint64_t> expected_revision) {
    auto key = head_key(agent_id);
    for (;;) {
        auto head = store_.get(key);
        if (!head) {
            fail(Errc::NotFound, "agent '" + std::string(agent_id) + "' not found");
        }
        if (expected_revision && *expected_revision != head->version) {
            fail(Errc::VersionConflict, "agent '" + std::string(agent_id) + "' changed");
        }
        try {
            store_.remove(key, head->version);
            break;
        } catch (const Error& e) {
            if (e.code() != Errc::VersionConflict) {
                throw;
            }
        }
    }
    for (const auto& rec : store_.scan("agentrev/" + std::string(agent_id) + "/")) {
        try {
            store_.remove(rec.key, rec.version);
        } catch (const Error&) {
        }
    }
    bus_.publish(events::kConfigApplied, json{{"agent_id", agent_id}, {"deleted", true}});
}

void Registry::put_secret(std::string_view name, std::string_view value,
                          std::string_view owner_agent) {
    if (!valid_name(name)) {
        fail(Errc::ValidationError, "invalid secret name '" + std::string(name) + "'");
    }
    json doc{{"name", name},
             {"owner", owner_agent},
             {"sealed", crypto::base64url_encode(crypto::seal(sealing_key_, value))}};
    store_.put(secret_key(name), doc.dump());
}

std::vector<SecretInfo> Registry::list_secrets() const {
    std::vector<SecretInfo> out;
    for (const auto& rec : store_.scan("secret/")) {
        auto doc = json::parse(rec.value);
        out.push_back(SecretInfo{doc.at("name").get<std::string>(),
                                 doc.at("owner").get<std::string>()});
    }
    return out;
}

std::optional<SecretInfo> Registry::secret_info(std::string_view name) const {
    auto rec = store_.get(secret_key(name));
    if (!rec) {
        return std::nullopt;
    }
    auto doc = json::parse(rec->value);
    return SecretInfo{doc.at("name").get<std::string>(), doc.at("owner").get<std::string>()};
}

void Registry::delete_secret(std::string_view name) {
    auto rec = store_.get(secret_key(name));
    if (!rec) {
        fail(Errc::NotFound, "secret '" + std::string(name) + "' not found");
    }
    store_.remove(rec->key, rec->version);
}

std::optional<std::string> Registry::open_secret(std::string_view name) const {
    auto rec = store_.get(secret_key(name));
    if (!rec) {
        return std::nullopt;
    }
    auto sealed = crypto::base64url_decode(json::parse(rec->value).at("sealed").get<std::string>());
    if (!sealed) {
        fail(Errc::StorageFailure, "secret '" + std::string(name) + "' is corrupt");
    }
    auto plain = crypto::open(sealing_key_, *sealed);
    if (!plain) {
        fail(Errc::StorageFailure,
             "secret '" + std::string(name) + "' does not open with the platform key");
    }
    return plain;
}

bool Registry::secret_matches(std::string_view name, std::string_view candidate) const {
    auto value = open_secret(name);
    return value && crypto::equal_constant_time(*value, candidate);
}

ResolvedHarness Registry::resolve_harness(std::string_view agent_id) const {
    auto def = get_definition(agent_id);
    ResolvedHarness h;
    h.agent_id = def.agent_id;
    h.revision = def.revision;
    h.system_prompt = def.system_prompt;
    h.model = def.model;
    h.volumes = def.volumes;
    h.idle_timeout_s = def.idle_timeout_s;
    h.keepalive_interval_s = def.keepalive_interval_s;
    h.containers.push_back(ResolvedContainer{def.main_container.name,
                                             def.main_container.image_or_behavior,
                                             def.main_container.env, true});
    for (const auto& s : def.sidecars) {
        h.containers.push_back(ResolvedContainer{s.name, s.image_or_behavior, s.env, false});
    }
    for (const auto& b : def.secret_bindings) {
        auto value = open_secret(b.secret_name);
        if (!value) {
            fail(Errc::UnresolvedSecret, b.secret_name);
        }
        for (auto& c : h.containers) {
            if (c.name == b.target_container) {
                c.env[b.env_var] = *value;
            }
        }
    }
    return h;
}

} // namespace agynlite::registry
