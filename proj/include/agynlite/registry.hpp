#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "agynlite/crypto.hpp"
#include "agynlite/events.hpp"
#include "agynlite/store.hpp"

namespace agynlite::registry {

using EnvMap = std::map<std::string, std::string>;

struct ContainerSpec {
    std::string name;
    // Simulated behavior id ("echo-agent", "mock-mcp", ...) or image reference.
    std::string image_or_behavior;
    EnvMap env;

    friend bool operator==(const ContainerSpec&, const ContainerSpec&) = default;
};

struct VolumeSpec {
    std::string name;
    std::string mount_path;

    friend bool operator==(const VolumeSpec&, const VolumeSpec&) = default;
};

struct SecretBinding {
    std::string secret_name;
    std::string target_container;
    std::string env_var;

    friend bool operator==(const SecretBinding&, const SecretBinding&) = default;
};

inline constexpr int kDefaultIdleTimeoutS = 300;
inline constexpr int kDefaultKeepaliveIntervalS = 10;

struct AgentDefinition {
    std::string agent_id;
    // 0 until stored.
    std::uint64_t revision = 0;
    std::string system_prompt;
    std::string model;
    ContainerSpec main_container;
    std::vector<ContainerSpec> sidecars;
    std::vector<SecretBinding> secret_bindings;
    std::vector<VolumeSpec> volumes;
    int idle_timeout_s = kDefaultIdleTimeoutS;
    int keepalive_interval_s = kDefaultKeepaliveIntervalS;

    friend bool operator==(const AgentDefinition&, const AgentDefinition&) = default;
};

// Canonical JSON form. Defaults are always written out, so two equal
// definitions always serialize identically.
nlohmann::json to_json(const AgentDefinition& def, bool include_revision = true);
// Throws ValidationError on missing/mistyped/unknown fields.
AgentDefinition definition_from_json(const nlohmann::json& doc);
// Throws ValidationError naming the first violated rule.
void validate(const AgentDefinition& def);
bool valid_name(std::string_view name);

struct ResolvedContainer {
    std::string name;
    std::string behavior;
    EnvMap env;
    bool main = false;
};

// Spawn-ready snapshot of one definition revision with secrets materialized
// into exactly the containers their bindings name.
struct ResolvedHarness {
    std::string agent_id;
    std::uint64_t revision = 0;
    std::string system_prompt;
    std::string model;
    std::vector<ResolvedContainer> containers;
    std::vector<VolumeSpec> volumes;
    int idle_timeout_s = kDefaultIdleTimeoutS;
    int keepalive_interval_s = kDefaultKeepaliveIntervalS;
};

struct SecretInfo {
    std::string name;
    // Agent whose maintainers may overwrite it; empty for admin-managed.
    std::string owner_agent;
};

// The Agents Service. Definitions live at "agent/<id>" where the store
// version doubles as the revision; immutable copies of every revision live
// at "agentrev/<id>/<rev>". Secrets are sealed under "secret/<name>".
class Registry {
public:
    Registry(store::Store& store, events::Bus& bus, const crypto::Key& sealing_key);

    // With expected_revision set, fails with VersionConflict unless the
    // current revision matches (0 = agent must not exist).
    std::uint64_t put_definition(AgentDefinition def,
                                 std::optional<std::uint64_t> expected_revision = std::nullopt);
    // nullopt = latest
    AgentDefinition get_definition(std::string_view agent_id,
                                   std::optional<std::uint64_t> revision = std::nullopt) const;
    std::optional<AgentDefinition> find_definition(std::string_view agent_id) const;
    std::vector<AgentDefinition> list_definitions() const;
    void delete_definition(std::string_view agent_id,
                           std::optional<std::uint64_t> expected_revision = std::nullopt);

    void put_secret(std::string_view name, std::string_view value,
                    std::string_view owner_agent = {});
    std::vector<SecretInfo> list_secrets() const;
    std::optional<SecretInfo> secret_info(std::string_view name) const;
    void delete_secret(std::string_view name);
    // Constant-time comparison against the stored value; false when absent.
    bool secret_matches(std::string_view name, std::string_view candidate) const;

    ResolvedHarness resolve_harness(std::string_view agent_id) const;

private:
    std::optional<std::string> open_secret(std::string_view name) const;

    store::Store& store_;
    events::Bus& bus_;
    crypto::Key sealing_key_;
};

} // namespace agynlite::registry
