#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "agynlite/configctl.hpp"
#include "agynlite/error.hpp"
#include "agynlite/gateway.hpp"
#include "support.hpp"

using namespace agynlite;
using namespace agynlite::configctl;
using nlohmann::json;
using testsupport::TestPlatform;

namespace {

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    throw std::runtime_error("expected an agynlite::Error");
}

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

const char* kBase = R"({
  "modules": {
    "search": {
      "sidecars": [{"name": "search", "image_or_behavior": "mock-mcp", "env": {}}],
      "secret_bindings": [{"secret_name": "SEARCH_KEY", "target_container": "search", "env_var": "KEY"}]
    }
  },
  "secrets": {
    "SEARCH_KEY": {"value": "s3cr3t-value"}
  },
  "agents": {
    "helper": {
      "system_prompt": "be helpful",
      "model": "model-x",
      "main_container": {"name": "main", "image_or_behavior": "echo-agent", "env": {}},
      "use": ["search"]
    }
  }
})";

struct Api {
    TestPlatform tp;
    gateway::InProcessTransport transport;
    Client client;

    explicit Api(const std::string& token = "tok-root")
        : transport(tp->gateway(), gateway::bearer(token)), client(transport) {}
};

Plan plan_against(Client& client, const DesiredState& desired, PlanOptions o = {}) {
    return plan(desired, fetch_live(client, desired), o);
}

DesiredState random_state(std::mt19937& rng) {
    static const std::vector<std::string> prompts = {"p0", "p1", "p2"};
    static const std::vector<std::string> values = {"v0", "v1", "v2-secret"};
    DesiredState d;
    for (int s = 0; s < 3; ++s) {
        if (rng() % 2 != 0) {
            auto name = "S" + std::to_string(s);
            d.secrets[name] = DesiredSecret{name, values[rng() % values.size()], ""};
        }
    }
    for (int a = 0; a < 4; ++a) {
        if (rng() % 3 == 0) {
            continue;
        }
        auto def = testsupport::simple_agent("a" + std::to_string(a), "quiet");
        def.system_prompt = prompts[rng() % prompts.size()];
        if (rng() % 2 != 0) {
            def.main_container.env["MODE"] = std::to_string(rng() % 3);
        }
        if (rng() % 2 != 0) {
            def.sidecars.push_back({"mcp", "mock-mcp", {{"LEVEL", std::to_string(rng() % 2)}}});
            if (!d.secrets.empty() && rng() % 2 != 0) {
                auto it = std::next(d.secrets.begin(), rng() % d.secrets.size());
                def.secret_bindings.push_back({it->first, "mcp", "TOKEN"});
            }
        }
        if (rng() % 2 != 0) {
            def.volumes.push_back({"ws", "/workspace"});
        }
        def.idle_timeout_s = 60 * (1 + static_cast<int>(rng() % 5));
        d.agents[def.agent_id] = def;
    }
    return d;
}

void expect_converged(Client& client, const DesiredState& desired) {
    auto live = fetch_live(client, desired);
    ASSERT_EQ(live.agents.size(), desired.agents.size());
    for (const auto& [id, def] : desired.agents) {
        auto got = live.agents.at(id);
        got.revision = 0;
        EXPECT_EQ(got, def) << id;
    }
    ASSERT_EQ(live.secrets.size(), desired.secrets.size());
    for (const auto& [name, s] : desired.secrets) {
        EXPECT_TRUE(live.secrets.at(name).value_matches) << name;
        EXPECT_EQ(live.secrets.at(name).owner_agent, s.owner_agent);
    }
}

} // namespace

TEST(Configctl, ParseExpandsModules) {
    auto d = parse({{"base.json", kBase}});
    ASSERT_EQ(d.agents.size(), 1u);
    const auto& a = d.agents.at("helper");
    EXPECT_EQ(a.agent_id, "helper");
    ASSERT_EQ(a.sidecars.size(), 1u);
    EXPECT_EQ(a.sidecars[0].name, "search");
    ASSERT_EQ(a.secret_bindings.size(), 1u);
    EXPECT_EQ(a.secret_bindings[0].secret_name, "SEARCH_KEY");
    EXPECT_EQ(a.idle_timeout_s, 300);
    EXPECT_EQ(d.secrets.at("SEARCH_KEY").value, "s3cr3t-value");
}

TEST(Configctl, ParseSplitsAcrossFiles) {
    auto d = parse({{"modules.json", R"({"modules":{"m":{"volumes":[{"name":"ws","mount_path":"/w"}]}}})"},
                    {"agents.json", R"({"agents":{"x":{"system_prompt":"p","model":"m",
                      "main_container":{"name":"main","image_or_behavior":"quiet","env":{}},
                      "use":["m"]}}})"}});
    ASSERT_EQ(d.agents.at("x").volumes.size(), 1u);
    EXPECT_EQ(d.agents.at("x").volumes[0].mount_path, "/w");
}

TEST(Configctl, ParseErrors) {
    EXPECT_EQ(code_of([] {
                  parse({{"a.json", R"({"agents":{"x":{"system_prompt":"p","model":"m",
                    "main_container":{"name":"main","image_or_behavior":"q","env":{}},"use":["nope"]}}})"}});
              }),
              Errc::UnknownModule);

    auto dup = [] {
        parse({{"one.json", R"({"agents":{"x":{}}})"}, {"two.json", R"({"agents":{"x":{}}})"}});
    };
    EXPECT_EQ(code_of(dup), Errc::SchemaError);
    EXPECT_NE(message_of(dup).find("one.json"), std::string::npos);

    auto broken = [] { parse({{"bad.json", "{\n  \"agents\": {\n    \"x\": ,\n"}}); };
    EXPECT_EQ(code_of(broken), Errc::ParseError);
    EXPECT_EQ(message_of(broken).rfind("bad.json:3:10:", 0), 0u) << message_of(broken);

    EXPECT_EQ(code_of([] { parse({{"a.json", R"({"agentz":{}})"}}); }), Errc::SchemaError);
    EXPECT_EQ(code_of([] { parse({{"a.json", R"({"secrets":{"K":{"value":"a","env":"B"}}})"}}); }),
              Errc::SchemaError);
    EXPECT_EQ(code_of([] {
                  parse({{"a.json", R"({"agents":{"x":{"system_prompt":"p","model":"m","revision":3,
                    "main_container":{"name":"main","image_or_behavior":"q","env":{}}}}})"}});
              }),
              Errc::SchemaError);
    // Validation failures surface as schema errors naming the agent.
    auto invalid = [] {
        parse({{"a.json", R"({"agents":{"x":{"system_prompt":"p","model":"m","idle_timeout_s":0,
                "main_container":{"name":"main","image_or_behavior":"q","env":{}}}}})"}});
    };
    EXPECT_EQ(code_of(invalid), Errc::SchemaError);
    EXPECT_NE(message_of(invalid).find("agent 'x'"), std::string::npos);
}

TEST(Configctl, SecretFromEnvironment) {
    ::setenv("AGYNLITE_TEST_SECRET", "from-env", 1);
    auto d = parse({{"s.json", R"({"secrets":{"K":{"env":"AGYNLITE_TEST_SECRET"}}})"}});
    EXPECT_EQ(d.secrets.at("K").value, "from-env");
    ::unsetenv("AGYNLITE_TEST_SECRET");
    EXPECT_EQ(code_of([] { parse({{"s.json", R"({"secrets":{"K":{"env":"AGYNLITE_TEST_SECRET"}}})"}}); }),
              Errc::SchemaError);
}

TEST(Configctl, ParsePathReadsDirectory) {
    testsupport::TempDir dir;
    std::ofstream(dir.path() / "b.json") << R"({"secrets":{"B":{"value":"1"}}})";
    std::ofstream(dir.path() / "a.json") << R"({"secrets":{"A":{"value":"1"}}})";
    std::ofstream(dir.path() / "notes.txt") << "ignored";
    auto d = parse_path(dir.path());
    EXPECT_EQ(d.secrets.size(), 2u);
    EXPECT_EQ(code_of([&] { parse_path(dir.path() / "missing"); }), Errc::NotFound);
}

TEST(Configctl, DiffPaths) {
    auto changes = diff(json{{"a", 1}, {"m", {{"x", 1}, {"y", 2}}}},
                        json{{"a", 1}, {"m", {{"x", 3}}}, {"n", true}});
    ASSERT_EQ(changes.size(), 3u);
    EXPECT_EQ(changes[0].path, "m.x");
    EXPECT_EQ(changes[1].path, "m.y");
    EXPECT_TRUE(changes[1].after.is_null());
    EXPECT_EQ(changes[2].path, "n");
    EXPECT_TRUE(diff(json{{"a", 1}}, json{{"a", 1}}).empty());
}

TEST(Configctl, PlanExamples) {
    Api api;
    auto desired = parse({{"base.json", kBase}});
    auto first = plan_against(api.client, desired);
    ASSERT_EQ(first.actions.size(), 2u);
    EXPECT_EQ(first.actions[0].resource, ResourceKind::Secret);
    EXPECT_EQ(first.actions[1].kind, ActionKind::Create);
    EXPECT_FALSE(apply(api.client, first).halted);
    EXPECT_TRUE(plan_against(api.client, desired).empty());
    EXPECT_EQ(render_text(plan_against(api.client, desired)),
              "No changes. Live state matches the definitions.\n");

    // A one-line prompt edit is exactly one field change.
    desired.agents.at("helper").system_prompt = "be brief";
    auto edit = plan_against(api.client, desired);
    ASSERT_EQ(edit.actions.size(), 1u);
    EXPECT_EQ(edit.actions[0].kind, ActionKind::Update);
    EXPECT_EQ(edit.actions[0].stamp.revision, 1u);
    ASSERT_EQ(edit.actions[0].changes.size(), 1u);
    EXPECT_EQ(edit.actions[0].changes[0].path, "system_prompt");
    EXPECT_EQ(edit.actions[0].changes[0].before, "be helpful");
    EXPECT_EQ(edit.actions[0].changes[0].after, "be brief");
    auto report = apply(api.client, edit);
    ASSERT_EQ(report.outcomes.size(), 1u);
    EXPECT_EQ(report.outcomes[0].revision, 2u);

    // Dropping the agent from the files plans a delete that stays blocked.
    DesiredState no_agent;
    no_agent.secrets = desired.secrets;
    auto del = plan_against(api.client, no_agent);
    ASSERT_EQ(del.actions.size(), 1u);
    EXPECT_EQ(del.actions[0].kind, ActionKind::Delete);
    EXPECT_TRUE(del.actions[0].blocked);
    EXPECT_EQ(del.blocked(), 1u);
    EXPECT_NE(render_text(del).find("blocked"), std::string::npos);
    auto skipped = apply(api.client, del);
    EXPECT_EQ(skipped.outcomes[0].status, "skipped");
    EXPECT_TRUE(api.tp->registry().find_definition("helper"));

    auto allowed = plan_against(api.client, no_agent, {true});
    EXPECT_FALSE(allowed.actions[0].blocked);
    EXPECT_FALSE(apply(api.client, allowed).halted);
    EXPECT_FALSE(api.tp->registry().find_definition("helper"));
}

TEST(Configctl, ApplyingAStalePlanFails) {
    Api api;
    auto desired = parse({{"base.json", kBase}});
    auto p = plan_against(api.client, desired);
    apply(api.client, p);
    EXPECT_EQ(code_of([&] { apply(api.client, p); }), Errc::StalePlan);

    desired.agents.at("helper").model = "model-y";
    auto edit = plan_against(api.client, desired);
    // Someone else updates the agent between plan and apply.
    auto def = *api.tp->registry().find_definition("helper");
    def.system_prompt = "changed elsewhere";
    api.tp->registry().put_definition(def, 1);
    EXPECT_EQ(code_of([&] { apply(api.client, edit); }), Errc::StalePlan);
    EXPECT_EQ(api.tp->registry().find_definition("helper")->system_prompt, "changed elsewhere");

    // A secret value changed elsewhere also invalidates the plan.
    desired = parse({{"base.json", kBase}});
    desired.agents.at("helper").system_prompt = "changed elsewhere";
    desired.secrets.at("SEARCH_KEY").value = "rotated";
    auto rotate = plan_against(api.client, desired);
    ASSERT_EQ(rotate.actions.size(), 1u);
    api.tp->registry().put_secret("SEARCH_KEY", "rotated", "");
    EXPECT_EQ(code_of([&] { apply(api.client, rotate); }), Errc::StalePlan);
}

TEST(Configctl, ApplyHaltsOnForbidden) {
    Api admin;
    gateway::InProcessTransport as_alice(admin.tp->gateway(), gateway::bearer("tok-alice"));
    Client alice(as_alice);
    DesiredState d;
    d.secrets["GLOBAL"] = DesiredSecret{"GLOBAL", "x", ""};
    auto a = testsupport::simple_agent("mine", "quiet");
    d.agents["mine"] = a;
    auto p = plan_against(alice, d);
    ASSERT_EQ(p.actions.size(), 2u);
    auto report = apply(alice, p);
    EXPECT_TRUE(report.halted);
    EXPECT_EQ(report.outcomes[0].status, "failed");
    EXPECT_EQ(report.outcomes[0].http_status, 403);
    EXPECT_EQ(report.outcomes[1].status, "not_run");
    EXPECT_FALSE(admin.tp->registry().find_definition("mine"));
    EXPECT_NE(render_report(report).find("halted"), std::string::npos);
    EXPECT_EQ(report_json(report)["halted"], true);
}

TEST(Configctl, PlanJsonShape) {
    Api api;
    auto p = plan_against(api.client, parse({{"base.json", kBase}}));
    auto j = render_json(p);
    ASSERT_EQ(j["actions"].size(), 2u);
    EXPECT_EQ(j["actions"][0]["action"], "create");
    EXPECT_EQ(j["actions"][0]["resource"], "secret");
    EXPECT_EQ(j["actions"][1]["name"], "helper");
    EXPECT_EQ(j["blocked"], 0);
}

// Applying any plan brings live state to the definitions, and a second plan
// is empty.
TEST(Configctl, ConvergenceAndIdempotenceProperty) {
    Api api;
    std::mt19937 rng(2024);
    for (int round = 0; round < 100; ++round) {
        auto desired = random_state(rng);
        auto p = plan_against(api.client, desired, {true});
        auto report = apply(api.client, p);
        ASSERT_FALSE(report.halted) << render_report(report);
        expect_converged(api.client, desired);
        auto again = plan_against(api.client, desired, {true});
        ASSERT_TRUE(again.empty()) << "round " << round << "\n" << render_text(again);
    }
}

// Secret values never appear in plan or report output.
TEST(Configctl, SensitiveValuesNeverRendered) {
    Api api;
    std::mt19937 rng(5);
    for (int round = 0; round < 50; ++round) {
        auto desired = random_state(rng);
        for (auto& [name, s] : desired.secrets) {
            s.value = "SENSITIVE-" + std::to_string(rng());
        }
        auto p = plan_against(api.client, desired, {true});
        auto text = render_text(p) + render_json(p).dump();
        auto report = apply(api.client, p);
        text += render_report(report) + report_json(report).dump();
        EXPECT_EQ(text.find("SENSITIVE-"), std::string::npos) << text;
    }
}
