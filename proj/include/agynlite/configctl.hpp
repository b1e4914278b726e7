#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agynlite/http.hpp"
#include "agynlite/registry.hpp"

namespace agynlite::configctl {

struct SourceFile {
    std::string name;
    std::string text;
};

struct DesiredSecret {
    std::string name;
    std::string value;
    std::string owner_agent;
};

struct DesiredState {
    std::map<std::string, registry::AgentDefinition> agents;
    std::map<std::string, DesiredSecret> secrets;
};

// Parses definition files, expands modules and validates the result.
// Errors: ParseError (file:line:col), UnknownModule, SchemaError.
DesiredState parse(const std::vector<SourceFile>& files);
// Every *.json file in dir (non-recursive, sorted by name), or a single file.
DesiredState parse_path(const std::filesystem::path& path);

struct LiveSecret {
    std::string name;
    std::string owner_agent;
    // Whether the stored value equals the desired one; unknown (false) for
    // secrets the desired state does not mention.
    bool value_matches = false;
};

struct LiveState {
    std::map<std::string, registry::AgentDefinition> agents;
    std::map<std::string, LiveSecret> secrets;
};

enum class ActionKind { Create, Update, Delete };
enum class ResourceKind { Agent, Secret };

std::string_view to_string(ActionKind k);
std::string_view to_string(ResourceKind k);

inline constexpr std::string_view kSensitive = "(sensitive)";

struct FieldChange {
    // Dotted path into the canonical document, e.g. "main_container.env.MODE".
    std::string path;
    // null when absent.
    nlohmann::json before;
    nlohmann::json after;
};

// What the live resource looked like when the plan was made.
struct VersionStamp {
    // Agents: registry revision, 0 when absent.
    std::uint64_t revision = 0;
    // Secrets.
    bool exists = false;
    bool value_matches = false;
    std::string owner_agent;

    friend bool operator==(const VersionStamp&, const VersionStamp&) = default;
};

struct Action {
    ActionKind kind = ActionKind::Create;
    ResourceKind resource = ResourceKind::Agent;
    std::string name;
    std::vector<FieldChange> changes;
    // Deletes are held back unless the plan allows them.
    bool blocked = false;
    VersionStamp stamp;
    std::optional<registry::AgentDefinition> agent;
    std::optional<DesiredSecret> secret;
};

struct Plan {
    std::vector<Action> actions;

    bool empty() const { return actions.empty(); }
    std::size_t blocked() const;
};

struct PlanOptions {
    bool allow_delete = false;
};

std::vector<FieldChange> diff(const nlohmann::json& before, const nlohmann::json& after);
Plan plan(const DesiredState& desired, const LiveState& live, PlanOptions options = {});

std::string render_text(const Plan& plan);
nlohmann::json render_json(const Plan& plan);

// Non-2xx answer from the platform API.
class ApiError : public std::runtime_error {
public:
    ApiError(int status, std::string code, const std::string& message)
        : std::runtime_error(message), status_(status), code_(std::move(code)) {}
    int status() const { return status_; }
    const std::string& code() const { return code_; }

private:
    int status_;
    std::string code_;
};

// Typed view of the platform API over any transport.
class Client {
public:
    explicit Client(ApiTransport& transport) : transport_(transport) {}

    nlohmann::json request(const std::string& method, const std::string& path,
                           const nlohmann::json& body = nullptr, HeaderMap headers = {},
                           std::map<std::string, std::string> query = {});

    std::vector<registry::AgentDefinition> list_agents();
    std::optional<registry::AgentDefinition> find_agent(const std::string& agent_id);
    std::uint64_t put_agent(const registry::AgentDefinition& def,
                            std::optional<std::uint64_t> if_match);
    void delete_agent(const std::string& agent_id, std::optional<std::uint64_t> if_match);
    nlohmann::json list_secrets();
    // {exists, matches, owner_agent}
    nlohmann::json compare_secret(const std::string& name, const std::string& value);
    void put_secret(const DesiredSecret& s);
    void delete_secret(const std::string& name);

private:
    ApiTransport& transport_;
};

// Reads the live registry through the API. Secret values are compared
// server side, never fetched.
LiveState fetch_live(Client& client, const DesiredState& desired);

struct ActionOutcome {
    ActionKind kind = ActionKind::Create;
    ResourceKind resource = ResourceKind::Agent;
    std::string name;
    // applied, skipped (blocked delete), failed, not_run
    std::string status;
    int http_status = 0;
    std::string error;
    std::uint64_t revision = 0;
};

struct ApplyReport {
    std::vector<ActionOutcome> outcomes;
    bool halted = false;
};

// Re-checks every stamp first (StalePlan if anything moved), then runs the
// actions in order and stops at the first failure.
ApplyReport apply(Client& client, const Plan& plan);

std::string render_report(const ApplyReport& report);
nlohmann::json report_json(const ApplyReport& report);

} // namespace agynlite::configctl
