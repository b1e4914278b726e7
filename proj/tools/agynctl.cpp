#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "agynlite/configctl.hpp"
#include "agynlite/error.hpp"
#include "agynlite/gateway.hpp"

using namespace agynlite;
using nlohmann::json;

namespace {

std::string env_or(const char* name, std::string fallback) {
    const char* v = std::getenv(name);
    return v != nullptr ? v : std::move(fallback);
}

void print_table(const std::vector<std::string>& headers,
                 const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(headers.size());
    for (std::size_t i = 0; i < headers.size(); ++i) {
        width[i] = headers[i].size();
        for (const auto& r : rows) {
            width[i] = std::max(width[i], r[i].size());
        }
    }
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            std::cout << std::left << std::setw(static_cast<int>(width[i]) + 2) << cells[i];
        }
        std::cout << "\n";
    };
    line(headers);
    for (const auto& r : rows) {
        line(r);
    }
}

std::string str(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

void print_instances(const json& list) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& i : list) {
        rows.push_back({str(i["instance_id"]), str(i["agent_id"]), str(i["thread_id"]),
                        str(i["state"]), str(i["definition_revision"]), str(i["last_active_ts"]),
                        str(i["error"])});
    }
    print_table({"INSTANCE", "AGENT", "THREAD", "STATE", "REV", "LAST_ACTIVE", "ERROR"}, rows);
}

// Turns an SSE byte stream into (topic, data) callbacks.
class SseParser {
public:
    explicit SseParser(std::function<bool(const std::string&, const json&)> on_event)
        : on_event_(std::move(on_event)) {}

    bool feed(std::string_view chunk) {
        buf_.append(chunk);
        std::size_t end;
        while ((end = buf_.find("\n\n")) != std::string::npos) {
            auto frame = buf_.substr(0, end);
            buf_.erase(0, end + 2);
            std::string topic;
            std::string data;
            std::istringstream in(frame);
            for (std::string line; std::getline(in, line);) {
                if (line.rfind("event: ", 0) == 0) {
                    topic = line.substr(7);
                } else if (line.rfind("data: ", 0) == 0) {
                    data = line.substr(6);
                }
            }
            if (!topic.empty() && !on_event_(topic, json::parse(data))) {
                return false;
            }
        }
        return true;
    }

private:
    std::function<bool(const std::string&, const json&)> on_event_;
    std::string buf_;
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"agynctl: manage an agynlite control plane"};
    app.require_subcommand(1);
    std::string addr = env_or("AGYNLITE_ADDR", "http://127.0.0.1:8080");
    std::string token = env_or("AGYNLITE_TOKEN", "");
    app.add_option("--addr", addr, "server address (AGYNLITE_ADDR)");
    app.add_option("--token", token, "bearer token (AGYNLITE_TOKEN)");

    std::string files;
    bool allow_delete = false;
    bool as_json = false;
    bool auto_approve = false;

    auto* plan_cmd = app.add_subcommand("plan", "diff definition files against the live registry");
    plan_cmd->add_option("-f,--file", files, "definition file or directory")->required();
    plan_cmd->add_flag("--allow-delete", allow_delete, "plan deletions of undeclared resources");
    plan_cmd->add_flag("--json", as_json, "machine-readable output");

    auto* apply_cmd = app.add_subcommand("apply", "apply definition files");
    apply_cmd->add_option("-f,--file", files, "definition file or directory")->required();
    apply_cmd->add_flag("--allow-delete", allow_delete, "delete undeclared resources");
    apply_cmd->add_flag("--auto-approve", auto_approve, "skip the confirmation prompt");
    apply_cmd->add_flag("--json", as_json, "machine-readable output");

    auto* agents_cmd = app.add_subcommand("agents", "agent definitions");
    agents_cmd->require_subcommand(1);
    auto* agents_list = agents_cmd->add_subcommand("list", "list agents");
    agents_list->add_flag("--json", as_json);

    bool watch = false;
    auto* instances_cmd = app.add_subcommand("instances", "agent instances");
    instances_cmd->require_subcommand(1);
    auto* instances_list = instances_cmd->add_subcommand("list", "list instances");
    instances_list->add_flag("--watch", watch, "keep printing state changes");
    instances_list->add_flag("--json", as_json);

    std::string tuple_text;
    auto* tuple_cmd = app.add_subcommand("tuple", "relation tuples");
    tuple_cmd->require_subcommand(1);
    auto* tuple_write = tuple_cmd->add_subcommand("write", "write object#relation@subject");
    tuple_write->add_option("tuple", tuple_text)->required();
    auto* tuple_delete = tuple_cmd->add_subcommand("delete", "delete object#relation@subject");
    tuple_delete->add_option("tuple", tuple_text)->required();
    auto* tuple_check = tuple_cmd->add_subcommand("check", "check object#permission@subject");
    tuple_check->add_option("tuple", tuple_text)->required();
    auto* tuple_list = tuple_cmd->add_subcommand("list", "list all tuples (admin)");

    std::vector<std::string> selector;
    std::vector<std::string> services;
    std::string policy_id;
    auto* policy_cmd = app.add_subcommand("policy", "dial policies (admin)");
    policy_cmd->require_subcommand(1);
    auto* policy_add = policy_cmd->add_subcommand("add", "allow identities matching a selector");
    policy_add->add_option("--id", policy_id, "policy id (generated when omitted)");
    policy_add->add_option("--selector", selector, "attribute=value, repeatable")->required();
    policy_add->add_option("--service", services, "service name, repeatable")->required();
    auto* policy_list = policy_cmd->add_subcommand("list", "list policies");
    auto* policy_delete = policy_cmd->add_subcommand("delete", "delete a policy");
    policy_delete->add_option("id", policy_id)->required();

    auto* identity_cmd = app.add_subcommand("identity", "overlay identities (admin)");
    identity_cmd->require_subcommand(1);
    auto* identity_list = identity_cmd->add_subcommand("list", "list identities");
    identity_list->add_flag("--json", as_json);

    std::string topic;
    std::uint64_t max_events = 0;
    auto* events_cmd = app.add_subcommand("events", "event feed");
    events_cmd->require_subcommand(1);
    auto* events_tail = events_cmd->add_subcommand("tail", "stream events of one topic");
    events_tail->add_option("topic", topic)->required();
    events_tail->add_option("--max", max_events, "stop after this many events");

    std::string agent_id;
    std::string thread_id;
    std::string text;
    auto* threads_cmd = app.add_subcommand("threads", "conversation threads");
    threads_cmd->require_subcommand(1);
    auto* threads_create = threads_cmd->add_subcommand("create", "open a thread with an agent");
    threads_create->add_option("--agent", agent_id)->required();
    threads_create->add_option("--id", thread_id);
    auto* threads_post = threads_cmd->add_subcommand("post", "post a message");
    threads_post->add_option("thread", thread_id)->required();
    threads_post->add_option("text", text)->required();
    auto* threads_show = threads_cmd->add_subcommand("show", "print a thread's messages");
    threads_show->add_option("thread", thread_id)->required();

    CLI11_PARSE(app, argc, argv);

    gateway::HttpClientTransport transport(addr, gateway::bearer(token));
    configctl::Client client(transport);

    try {
        if (plan_cmd->parsed() || apply_cmd->parsed()) {
            auto desired = configctl::parse_path(files);
            auto live = configctl::fetch_live(client, desired);
            auto plan = configctl::plan(desired, live, {allow_delete});
            if (plan_cmd->parsed()) {
                if (as_json) {
                    std::cout << configctl::render_json(plan).dump(2) << "\n";
                } else {
                    std::cout << configctl::render_text(plan);
                }
                return plan.empty() ? 0 : 2;
            }
            if (!as_json) {
                std::cout << configctl::render_text(plan);
            }
            if (plan.empty()) {
                if (as_json) {
                    std::cout << configctl::report_json({}).dump(2) << "\n";
                }
                return 0;
            }
            if (!auto_approve) {
                std::cout << "Apply these changes? [y/N] " << std::flush;
                std::string answer;
                std::getline(std::cin, answer);
                if (answer != "y" && answer != "yes") {
                    std::cout << "Cancelled.\n";
                    return 1;
                }
            }
            auto report = configctl::apply(client, plan);
            if (as_json) {
                std::cout << configctl::report_json(report).dump(2) << "\n";
            } else {
                std::cout << configctl::render_report(report);
            }
            return report.halted ? 1 : 0;
        }
        if (agents_list->parsed()) {
            auto list = client.request("GET", "/agents");
            if (as_json) {
                std::cout << list.dump(2) << "\n";
                return 0;
            }
            std::vector<std::vector<std::string>> rows;
            for (const auto& a : list) {
                rows.push_back({str(a["agent_id"]), str(a["revision"]), str(a["model"]),
                                str(a["main_container"]["image_or_behavior"])});
            }
            print_table({"AGENT", "REVISION", "MODEL", "MAIN"}, rows);
            return 0;
        }
        if (instances_list->parsed()) {
            auto list = client.request("GET", "/instances");
            if (as_json && !watch) {
                std::cout << list.dump(2) << "\n";
                return 0;
            }
            print_instances(list);
            if (!watch) {
                return 0;
            }
            SseParser parser([](const std::string&, const json& e) {
                std::cout << str(e["ts"]) << "  " << str(e["instance_id"]) << "  "
                          << str(e["agent_id"]) << "/" << str(e["thread_id"]) << "  -> "
                          << str(e["state"]) << std::endl;
                return true;
            });
            HttpRequest req{"GET", "/events/stream", {}, {}, {{"topics", "instance.state"}}};
            transport.stream(req, [&](std::string_view c) { return parser.feed(c); });
            return 0;
        }
        if (tuple_write->parsed() || tuple_delete->parsed()) {
            auto res = client.request(tuple_write->parsed() ? "POST" : "DELETE", "/tuples",
                                      json{{"tuple", tuple_text}});
            std::cout << (tuple_write->parsed() ? "wrote " : "deleted ") << str(res["tuple"])
                      << "\n";
            return 0;
        }
        if (tuple_check->parsed()) {
            auto res = client.request("POST", "/tuples/check", json{{"tuple", tuple_text}});
            bool ok = res.value("allowed", false);
            std::cout << (ok ? "allowed" : "denied") << "\n";
            return ok ? 0 : 2;
        }
        if (tuple_list->parsed()) {
            for (const auto& t : client.request("GET", "/tuples")) {
                std::cout << str(t) << "\n";
            }
            return 0;
        }
        if (policy_add->parsed()) {
            json sel = json::object();
            for (const auto& term : selector) {
                auto eq = term.find('=');
                if (eq == std::string::npos) {
                    std::cerr << "error: selector terms look like attribute=value\n";
                    return 1;
                }
                sel[term.substr(0, eq)] = term.substr(eq + 1);
            }
            json body{{"selector", sel}, {"services", services}};
            if (!policy_id.empty()) {
                body["policy_id"] = policy_id;
            }
            std::cout << str(client.request("POST", "/policies", body)["policy_id"]) << "\n";
            return 0;
        }
        if (policy_list->parsed()) {
            std::cout << client.request("GET", "/policies").dump(2) << "\n";
            return 0;
        }
        if (policy_delete->parsed()) {
            client.request("DELETE", "/policies/" + policy_id);
            return 0;
        }
        if (identity_list->parsed()) {
            auto list = client.request("GET", "/identities");
            if (as_json) {
                std::cout << list.dump(2) << "\n";
                return 0;
            }
            std::vector<std::vector<std::string>> rows;
            for (const auto& i : list) {
                rows.push_back({str(i["identity_id"]), str(i["class"]), str(i["subject"]),
                                i["attributes"].dump(), str(i["lease_id"])});
            }
            print_table({"IDENTITY", "CLASS", "SUBJECT", "ATTRIBUTES", "LEASE"}, rows);
            return 0;
        }
        if (events_tail->parsed()) {
            std::uint64_t seen = 0;
            SseParser parser([&](const std::string& t, const json& e) {
                std::cout << t << " " << e.dump() << std::endl;
                return max_events == 0 || ++seen < max_events;
            });
            HttpRequest req{"GET", "/events/stream", {}, {}, {{"topics", topic}}};
            if (max_events != 0) {
                req.query["max_events"] = std::to_string(max_events);
            }
            transport.stream(req, [&](std::string_view c) { return parser.feed(c); });
            return 0;
        }
        if (threads_create->parsed()) {
            json body{{"agent_id", agent_id}};
            if (!thread_id.empty()) {
                body["thread_id"] = thread_id;
            }
            std::cout << str(client.request("POST", "/threads", body)["thread_id"]) << "\n";
            return 0;
        }
        if (threads_post->parsed()) {
            auto m = client.request("POST", "/threads/" + thread_id + "/messages",
                                    json{{"text", text}});
            std::cout << str(m["message_id"]) << "\n";
            return 0;
        }
        if (threads_show->parsed()) {
            for (const auto& m : client.request("GET", "/threads/" + thread_id + "/messages")) {
                std::cout << "[" << str(m["seq"]) << "] " << str(m["author"]) << ": "
                          << str(m["text"]) << "\n";
            }
            return 0;
        }
    } catch (const configctl::ApiError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
