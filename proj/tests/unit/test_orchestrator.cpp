#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "agynlite/error.hpp"
#include "agynlite/orchestrator.hpp"
#include "support.hpp"

using namespace agynlite;
using namespace agynlite::orchestrator;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

// Bumps <mount>/counter once per start.
class Counter : public runner::Behavior {
public:
    void run(runner::ContainerContext& ctx) override {
        auto dir = ctx.resolve_mount("/data");
        int n = 0;
        if (std::ifstream in(dir / "counter"); in) {
            in >> n;
        }
        std::ofstream(dir / "counter.tmp", std::ios::trunc) << n + 1;
        std::filesystem::rename(dir / "counter.tmp", dir / "counter");
        while (!ctx.stopping()) {
            ctx.receive(20ms);
        }
    }
};

// Forwards to a SimRunner and lets tests observe or break workload stops.
class ProbeRunner final : public runner::Runner {
public:
    explicit ProbeRunner(runner::SimRunner& inner) : inner_(inner) {}

    runner::WorkloadHandle create_workload(const runner::WorkloadSpec& spec) override {
        ++creates;
        return inner_.create_workload(spec);
    }
    void stop_workload(std::string_view id) override {
        if (before_stop) {
            before_stop(id);
        }
        if (fail_stop) {
            fail(Errc::RunnerUnavailable, "runner unreachable");
        }
        inner_.stop_workload(id);
    }
    std::vector<runner::WorkloadInfo> list_workloads() const override {
        return inner_.list_workloads();
    }
    void loopback_send(const runner::ContainerRef& from, const runner::ContainerRef& to,
                       std::string message) override {
        inner_.loopback_send(from, to, std::move(message));
    }
    runner::EnvMap inspect_env(std::string_view w, std::string_view c) const override {
        return inner_.inspect_env(w, c);
    }
    void deliver(std::string_view w, const json& m) override { inner_.deliver(w, m); }

    std::function<void(std::string_view)> before_stop;
    std::atomic<bool> fail_stop{false};
    std::atomic<int> creates{0};

private:
    runner::SimRunner& inner_;
};

struct Rig {
    testsupport::TempDir dir;
    store::Store store;
    ManualClock clock{Millis{1'000'000}};
    events::Bus bus{store, clock};
    crypto::Key key = crypto::random_key();
    registry::Registry reg{store, bus, key};
    threads::ThreadStore threads{store, clock};
    identity::IdentityProvider idp{store, bus, clock, key, "prov"};
    std::shared_ptr<testsupport::Inbox> inbox = std::make_shared<testsupport::Inbox>();
    runner::SimRunner sim{dir.path() / "runner", catalog(), nullptr};
    ProbeRunner runner{sim};
    std::unique_ptr<Orchestrator> orch;

    explicit Rig(OrchestratorOptions o = {}) { restart(o); }

    runner::BehaviorCatalog catalog() {
        auto c = testsupport::test_catalog(inbox);
        c.add("counter", [] { return std::make_unique<Counter>(); });
        return c;
    }

    // A fresh orchestrator over the same store and runner, as after a crash.
    void restart(OrchestratorOptions o = {}) {
        orch.reset();
        orch = std::make_unique<Orchestrator>(store, bus, reg, threads, idp, runner, o);
    }

    void agent(const std::string& id, const std::string& behavior = "quiet", int idle_s = 300) {
        auto d = testsupport::simple_agent(id, behavior);
        d.idle_timeout_s = idle_s;
        reg.put_definition(d);
    }

    std::string thread(const std::string& agent_id, const std::string& id) {
        return threads.create_thread(id, agent_id, "user:alice").thread_id;
    }

    events::Event post(const std::string& thread_id, const std::string& text,
                       const std::string& author = "user:alice",
                       const std::string& kind = "user") {
        auto t = threads.find_thread(thread_id);
        auto m = threads.append_message(thread_id, author, kind, text);
        bus.publish(events::kThreadMessage,
                              json{{"thread_id", thread_id},
                                   {"agent_id", t->agent_id},
                                   {"message_id", m.message_id},
                                   {"seq", m.seq},
                                   {"author", author},
                                   {"author_kind", kind},
                                   {"text", text},
                                   {"in_reply_to", ""},
                                   {"ts", m.ts.count()}});
        return bus.history(events::kThreadMessage).back();
    }

    ReconcileOutcome handle(const events::Event& e) { return orch->handle_message_event(e, clock.now()); }

    std::size_t live_count(const std::string& agent_id, const std::string& thread_id) {
        std::size_t n = 0;
        for (const auto& i : orch->instances()) {
            if (i.agent_id == agent_id && i.thread_id == thread_id && is_live(i.state)) {
                ++n;
            }
        }
        return n;
    }

    std::vector<std::string> states_of(const std::string& instance_id) {
        std::vector<std::string> out;
        for (const auto& e : bus.history(events::kInstanceState)) {
            if (e.payload["instance_id"] == instance_id) {
                out.push_back(e.payload["state"]);
            }
        }
        return out;
    }
};

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    throw std::runtime_error("expected an agynlite::Error");
}

} // namespace

TEST(Orchestrator, TransitionTable) {
    using S = InstanceState;
    std::set<std::pair<S, S>> allowed = {{S::Provisioning, S::Running},
                                         {S::Running, S::Stopping},
                                         {S::Stopping, S::Stopped},
                                         {S::Provisioning, S::Failed},
                                         {S::Running, S::Failed}};
    for (auto a : {S::Provisioning, S::Running, S::Stopping, S::Stopped, S::Failed}) {
        for (auto b : {S::Provisioning, S::Running, S::Stopping, S::Stopped, S::Failed}) {
            EXPECT_EQ(transition_allowed(a, b), allowed.count({a, b}) == 1)
                << to_string(a) << "->" << to_string(b);
        }
        EXPECT_EQ(state_from_string(to_string(a)), a);
    }
    EXPECT_FALSE(state_from_string("Sleeping"));
}

TEST(Orchestrator, ColdStartSpawns) {
    Rig r;
    r.agent("a", "recorder");
    r.thread("a", "t1");
    auto out = r.handle(r.post("t1", "hello"));
    EXPECT_TRUE(out.spawned);
    EXPECT_FALSE(out.forwarded);
    ASSERT_GE(out.actions.size(), 4u);
    EXPECT_EQ(out.actions[0].rfind("claim ", 0), 0u);
    EXPECT_EQ(out.actions[1].rfind("resolve_harness", 0), 0u);
    EXPECT_EQ(out.actions[2].rfind("mint_identity", 0), 0u);
    EXPECT_EQ(out.actions[3].rfind("create_workload", 0), 0u);

    auto inst = r.orch->find_instance(out.instance_id);
    ASSERT_TRUE(inst);
    EXPECT_EQ(inst->state, InstanceState::Running);
    EXPECT_EQ(inst->definition_revision, 1u);
    EXPECT_EQ(inst->last_active_ts, r.clock.now());
    EXPECT_FALSE(inst->identity_id.empty());
    EXPECT_FALSE(inst->workload_id.empty());
    auto ident = r.idp.find(inst->identity_id);
    ASSERT_TRUE(ident);
    EXPECT_EQ(ident->subject, inst->instance_id);
    EXPECT_EQ(ident->attributes.at("agent_id"), "a");
    EXPECT_EQ(r.sim.list_workloads().size(), 1u);
    EXPECT_EQ(r.states_of(inst->instance_id), (std::vector<std::string>{"Provisioning", "Running"}));

    ASSERT_TRUE(testsupport::wait_until([&] { return r.inbox->size() == 1; }, 5s));
    EXPECT_EQ(r.inbox->snapshot()[0]["text"], "hello");
}

TEST(Orchestrator, StateEventsCarryContract) {
    Rig r;
    r.agent("a");
    r.thread("a", "t1");
    r.handle(r.post("t1", "x"));
    for (const auto& e : r.bus.history(events::kInstanceState)) {
        for (auto k : {"instance_id", "agent_id", "thread_id", "state", "ts"}) {
            EXPECT_TRUE(e.payload.contains(k)) << k;
        }
        EXPECT_EQ(e.payload["ts"], r.clock.now().count());
    }
}

TEST(Orchestrator, WarmPathForwards) {
    Rig r;
    r.agent("a", "recorder");
    r.thread("a", "t1");
    auto first = r.handle(r.post("t1", "one"));
    r.clock.advance(5s);
    auto second = r.handle(r.post("t1", "two"));
    EXPECT_FALSE(second.spawned);
    EXPECT_TRUE(second.forwarded);
    EXPECT_EQ(second.instance_id, first.instance_id);
    EXPECT_EQ(r.orch->find_instance(first.instance_id)->last_active_ts, r.clock.now());
    EXPECT_EQ(r.runner.creates, 1);
    ASSERT_TRUE(testsupport::wait_until([&] { return r.inbox->size() == 2; }, 5s));
    auto got = r.inbox->snapshot();
    EXPECT_EQ(got[0]["text"], "one");
    EXPECT_EQ(got[1]["text"], "two");
    EXPECT_EQ(got[0]["workload_id"], got[1]["workload_id"]);
}

TEST(Orchestrator, ReplayIsNoop) {
    Rig r;
    r.agent("a", "recorder");
    r.thread("a", "t1");
    auto e = r.post("t1", "once");
    EXPECT_TRUE(r.handle(e).spawned);
    auto again = r.handle(e);
    EXPECT_TRUE(again.noop);
    EXPECT_FALSE(again.forwarded);
    std::this_thread::sleep_for(60ms);
    EXPECT_EQ(r.inbox->size(), 1u);

    // The processed set is durable across orchestrator restarts.
    r.restart();
    EXPECT_TRUE(r.handle(e).noop);
}

TEST(Orchestrator, ProcessedRetentionIsBounded) {
    Rig r(OrchestratorOptions{5, 20});
    r.agent("a");
    r.thread("a", "t1");
    std::vector<events::Event> evs;
    for (int i = 0; i < 12; ++i) {
        evs.push_back(r.post("t1", "m" + std::to_string(i)));
        r.handle(evs.back());
    }
    EXPECT_EQ(r.store.scan("orch/processed/").size(), 5u);
    EXPECT_TRUE(r.handle(evs.back()).noop);
    EXPECT_FALSE(r.handle(evs.front()).noop);
}

TEST(Orchestrator, AgentsOwnRepliesIgnored) {
    Rig r;
    r.agent("a");
    r.thread("a", "t1");
    auto out = r.handle(r.post("t1", "my reply", "agent:a", "agent"));
    EXPECT_TRUE(out.ignored);
    EXPECT_TRUE(r.orch->instances().empty());
    // A different agent posting into the thread is a real message.
    EXPECT_TRUE(r.handle(r.post("t1", "hi", "agent:b", "agent")).spawned);
}

TEST(Orchestrator, UnknownThread) {
    Rig r;
    r.bus.publish(events::kThreadMessage, json{{"thread_id", "ghost"}, {"text", "x"}});
    auto e = r.bus.history(events::kThreadMessage).back();
    EXPECT_EQ(code_of([&] { r.handle(e); }), Errc::NotFound);
    EXPECT_TRUE(r.handle(e).noop);
}

TEST(Orchestrator, KeepaliveMaxRule) {
    Rig r;
    r.clock.set(Millis{40'000});
    r.agent("a");
    r.thread("a", "t1");
    auto id = r.handle(r.post("t1", "x")).instance_id;
    EXPECT_EQ(r.orch->find_instance(id)->last_active_ts, Millis{40'000});
    r.orch->record_keepalive(id, Millis{42'000});
    EXPECT_EQ(r.orch->find_instance(id)->last_active_ts, Millis{42'000});
    r.orch->record_keepalive(id, Millis{41'000});
    EXPECT_EQ(r.orch->find_instance(id)->last_active_ts, Millis{42'000});
    EXPECT_EQ(code_of([&] { r.orch->record_keepalive("inst-nope", Millis{1}); }),
              Errc::UnknownInstance);

    r.clock.set(Millis{42'000} + 301s);
    EXPECT_EQ(r.orch->sweep_idle(r.clock.now()), std::vector<std::string>{id});
    EXPECT_EQ(code_of([&] { r.orch->record_keepalive(id, r.clock.now()); }), Errc::WrongState);
}

TEST(Orchestrator, SweepBoundaries) {
    Rig r;
    r.agent("a", "quiet", 300);
    r.thread("a", "t1");
    auto t0 = r.clock.now();
    auto id = r.handle(r.post("t1", "x")).instance_id;
    EXPECT_TRUE(r.orch->sweep_idle(t0 + 299s).empty());
    EXPECT_TRUE(r.orch->sweep_idle(t0 + 300s).empty());
    EXPECT_EQ(r.orch->sweep_idle(t0 + 301s), std::vector<std::string>{id});

    auto inst = r.orch->find_instance(id);
    EXPECT_EQ(inst->state, InstanceState::Stopped);
    EXPECT_EQ(inst->state_ts, t0 + 301s);
    EXPECT_TRUE(inst->identity_id.empty());
    EXPECT_TRUE(inst->workload_id.empty());
    EXPECT_FALSE(r.idp.find_by_subject(identity::IdentityClass::EphemeralWorkload, id));
    EXPECT_TRUE(r.sim.list_workloads().empty());
    EXPECT_FALSE(r.orch->live_instance("a", "t1"));
    EXPECT_EQ(r.threads.messages("t1").size(), 1u);
    EXPECT_EQ(r.states_of(id),
              (std::vector<std::string>{"Provisioning", "Running", "Stopping", "Stopped"}));
}

TEST(Orchestrator, SweepReclaimsOnlyTheIdleOne) {
    Rig r;
    r.agent("a", "quiet", 300);
    r.thread("a", "t1");
    r.thread("a", "t2");
    auto t0 = r.clock.now();
    auto idle = r.handle(r.post("t1", "x")).instance_id;
    auto busy = r.handle(r.post("t2", "x")).instance_id;
    r.orch->record_keepalive(busy, t0 + 200s);
    EXPECT_EQ(r.orch->sweep_idle(t0 + 301s), std::vector<std::string>{idle});
    EXPECT_EQ(r.orch->find_instance(busy)->state, InstanceState::Running);
}

TEST(Orchestrator, ForwardKeepsInstanceWarm) {
    Rig r;
    r.agent("a", "quiet", 300);
    r.thread("a", "t1");
    auto t0 = r.clock.now();
    auto id = r.handle(r.post("t1", "x")).instance_id;
    r.clock.set(t0 + 250s);
    r.handle(r.post("t1", "y"));
    EXPECT_TRUE(r.orch->sweep_idle(t0 + 400s).empty());
    EXPECT_EQ(r.orch->sweep_idle(t0 + 551s), std::vector<std::string>{id});
}

TEST(Orchestrator, VolumeReattachedAfterReclaim) {
    Rig r;
    auto d = testsupport::simple_agent("a", "counter");
    d.volumes = {{"ws", "/data"}};
    r.reg.put_definition(d);
    r.thread("a", "t1");
    auto vol = r.sim.volume_dir("a.t1.ws");
    std::set<std::string> ids;
    for (int cycle = 1; cycle <= 5; ++cycle) {
        auto out = r.handle(r.post("t1", "wake"));
        ASSERT_TRUE(out.spawned);
        ids.insert(out.instance_id);
        ASSERT_TRUE(testsupport::wait_until(
            [&] {
                std::ifstream in(vol / "counter");
                int n = 0;
                return in && (in >> n) && n == cycle;
            },
            5s))
            << "cycle " << cycle;
        r.clock.advance(301s);
        ASSERT_EQ(r.orch->sweep_idle(r.clock.now()).size(), 1u);
    }
    EXPECT_EQ(ids.size(), 5u);
    EXPECT_EQ(r.threads.messages("t1").size(), 5u);
}

TEST(Orchestrator, SpawnFailureRollsBack) {
    Rig r;
    auto d = testsupport::simple_agent("a", "quiet");
    d.sidecars = {{"mcp", "quiet", {}}};
    d.secret_bindings = {{"MISSING", "mcp", "TOKEN"}};
    r.reg.put_definition(d);
    r.thread("a", "t1");
    auto e = r.post("t1", "x");
    EXPECT_EQ(code_of([&] { r.handle(e); }), Errc::SpawnFailed);
    auto all = r.orch->instances();
    ASSERT_EQ(all.size(), 1u);
    EXPECT_EQ(all[0].state, InstanceState::Failed);
    EXPECT_NE(all[0].error.find("MISSING"), std::string::npos);
    EXPECT_TRUE(r.idp.list().empty());
    EXPECT_TRUE(r.sim.list_workloads().empty());
    EXPECT_FALSE(r.orch->live_instance("a", "t1"));
    EXPECT_EQ(r.states_of(all[0].instance_id), (std::vector<std::string>{"Provisioning", "Failed"}));
    auto last = r.bus.history(events::kInstanceState).back().payload;
    EXPECT_TRUE(last.contains("error"));
    EXPECT_TRUE(r.handle(e).noop);

    r.reg.put_secret("MISSING", "now-present");
    auto ok = r.handle(r.post("t1", "y"));
    EXPECT_TRUE(ok.spawned);
    EXPECT_EQ(r.orch->find_instance(ok.instance_id)->definition_revision, 1u);
}

TEST(Orchestrator, RunnerRejectionDeletesIdentity) {
    Rig r;
    r.agent("a", "no-such-behavior");
    r.thread("a", "t1");
    EXPECT_EQ(code_of([&] { r.handle(r.post("t1", "x")); }), Errc::SpawnFailed);
    EXPECT_TRUE(r.idp.list().empty());
    bool deleted = false;
    for (const auto& ev : r.bus.history(events::kIdentityChange)) {
        deleted |= ev.payload["change"] == "deleted";
    }
    EXPECT_TRUE(deleted);
}

TEST(Orchestrator, IdentityOutlivesWorkloadStop) {
    Rig r;
    r.agent("a");
    r.thread("a", "t1");
    auto id = r.handle(r.post("t1", "x")).instance_id;
    auto cred = r.idp.find(r.orch->find_instance(id)->identity_id)->credential;
    bool verified_during_stop = false;
    InstanceState state_during_stop{};
    r.runner.before_stop = [&](std::string_view) {
        verified_during_stop = r.idp.verify(cred).has_value();
        state_during_stop = r.orch->find_instance(id)->state;
    };
    r.clock.advance(301s);
    ASSERT_EQ(r.orch->sweep_idle(r.clock.now()).size(), 1u);
    EXPECT_TRUE(verified_during_stop);
    EXPECT_EQ(state_during_stop, InstanceState::Stopping);
    EXPECT_FALSE(r.idp.verify(cred));
}

TEST(Orchestrator, FailedStopStaysStoppingUntilCompleted) {
    Rig r;
    r.agent("a");
    r.thread("a", "t1");
    auto id = r.handle(r.post("t1", "x")).instance_id;
    auto cred = r.idp.find(r.orch->find_instance(id)->identity_id)->credential;
    r.runner.fail_stop = true;
    r.clock.advance(301s);
    EXPECT_TRUE(r.orch->sweep_idle(r.clock.now()).empty());
    auto failures = r.orch->last_sweep_failures();
    ASSERT_EQ(failures.size(), 1u);
    EXPECT_EQ(failures[0].instance_id, id);
    EXPECT_EQ(r.orch->find_instance(id)->state, InstanceState::Stopping);
    EXPECT_TRUE(r.idp.verify(cred));
    EXPECT_EQ(r.live_count("a", "t1"), 1u);

    // While the runner is down a new message cannot spawn a second instance.
    EXPECT_EQ(code_of([&] { r.handle(r.post("t1", "y")); }), Errc::SpawnFailed);
    EXPECT_EQ(r.live_count("a", "t1"), 1u);

    r.runner.fail_stop = false;
    auto out = r.handle(r.post("t1", "z"));
    EXPECT_TRUE(out.spawned);
    EXPECT_EQ(out.actions.front(), "complete_stop " + id);
    EXPECT_EQ(r.orch->find_instance(id)->state, InstanceState::Stopped);
    EXPECT_FALSE(r.idp.verify(cred));
    EXPECT_EQ(r.live_count("a", "t1"), 1u);
}

TEST(Orchestrator, LostWorkloadRespawnsOnNextMessage) {
    Rig r;
    r.agent("a");
    r.thread("a", "t1");
    auto first = r.handle(r.post("t1", "x"));
    r.sim.stop_workload(r.orch->find_instance(first.instance_id)->workload_id);
    auto second = r.handle(r.post("t1", "y"));
    EXPECT_TRUE(second.spawned);
    EXPECT_NE(second.instance_id, first.instance_id);
    EXPECT_EQ(r.orch->find_instance(first.instance_id)->state, InstanceState::Failed);
    EXPECT_FALSE(r.idp.find_by_subject(identity::IdentityClass::EphemeralWorkload,
                                       first.instance_id));
}

TEST(Orchestrator, NewRevisionOnlyAtNextSpawn) {
    Rig r;
    r.agent("a", "recorder");
    r.thread("a", "t1");
    auto first = r.handle(r.post("t1", "x"));
    auto d = testsupport::simple_agent("a", "recorder");
    d.system_prompt = "changed";
    EXPECT_EQ(r.reg.put_definition(d), 2u);
    r.handle(r.post("t1", "y"));
    EXPECT_EQ(r.orch->find_instance(first.instance_id)->definition_revision, 1u);
    ASSERT_TRUE(testsupport::wait_until([&] { return r.inbox->size() == 2; }, 5s));
    r.clock.advance(301s);
    r.orch->sweep_idle(r.clock.now());
    auto next = r.handle(r.post("t1", "z"));
    EXPECT_EQ(r.orch->find_instance(next.instance_id)->definition_revision, 2u);
    ASSERT_TRUE(testsupport::wait_until([&] { return r.inbox->size() == 3; }, 5s));
    auto got = r.inbox->snapshot();
    EXPECT_EQ(got[0]["revision"], 1);
    EXPECT_EQ(got[1]["revision"], 1);
    EXPECT_EQ(got[2]["revision"], 2);
}

TEST(Orchestrator, RecoverStopsOrphans) {
    Rig r;
    runner::WorkloadSpec w9;
    w9.workload_id = "w9";
    w9.containers = {{"main", "quiet", {}}};
    r.sim.create_workload(w9);
    auto actions = r.orch->recover(r.clock.now());
    EXPECT_EQ(actions, (std::vector<CorrectiveAction>{{"stop_orphan", "w9"}}));
    EXPECT_TRUE(r.sim.list_workloads().empty());
    EXPECT_TRUE(r.orch->recover(r.clock.now()).empty());
}

TEST(Orchestrator, RecoverFailsRecordsWithoutWorkload) {
    Rig r;
    r.agent("a");
    r.thread("a", "t1");
    auto id = r.handle(r.post("t1", "x")).instance_id;
    auto ident = r.orch->find_instance(id)->identity_id;
    r.sim.stop_all();
    r.restart();
    auto actions = r.orch->recover(r.clock.now());
    EXPECT_NE(std::find(actions.begin(), actions.end(), CorrectiveAction{"fail_instance", id}),
              actions.end());
    EXPECT_NE(std::find(actions.begin(), actions.end(), CorrectiveAction{"delete_identity", ident}),
              actions.end());
    EXPECT_EQ(r.orch->find_instance(id)->state, InstanceState::Failed);
    EXPECT_FALSE(r.idp.find(ident));
    EXPECT_TRUE(r.orch->recover(r.clock.now()).empty());
    EXPECT_TRUE(r.handle(r.post("t1", "again")).spawned);
}

TEST(Orchestrator, RecoverConsistentStateIsFixedPoint) {
    Rig r;
    r.agent("a");
    for (int i = 0; i < 3; ++i) {
        r.thread("a", "t" + std::to_string(i));
        r.handle(r.post("t" + std::to_string(i), "x"));
    }
    r.restart();
    EXPECT_TRUE(r.orch->recover(r.clock.now()).empty());
    EXPECT_EQ(r.sim.list_workloads().size(), 3u);
    r.runner.fail_stop = false;
    r.sim.set_available(false);
    EXPECT_EQ(code_of([&] { r.orch->recover(r.clock.now()); }), Errc::RunnerUnavailable);
}

// Crash the orchestrator at every spawn step, restart, recover, and check the
// instance invariants hold and the thread keeps working.
TEST(Orchestrator, CrashAtEachSpawnStepRecovers) {
    for (auto step : {SpawnStep::Claimed, SpawnStep::HarnessResolved, SpawnStep::IdentityMinted,
                      SpawnStep::WorkloadCreated}) {
        Rig r;
        r.agent("a", "recorder");
        r.thread("a", "t1");
        r.orch->set_fault_hook([step](SpawnStep s, const Instance&) {
            if (s == step) {
                throw SimulatedCrash();
            }
        });
        auto e = r.post("t1", "x");
        EXPECT_THROW(r.handle(e), SimulatedCrash);
        auto crashed = r.orch->instances().at(0);

        r.restart();
        auto actions = r.orch->recover(r.clock.now());
        auto inst = r.orch->find_instance(crashed.instance_id);
        if (step == SpawnStep::WorkloadCreated) {
            EXPECT_EQ(actions, (std::vector<CorrectiveAction>{{"promote", crashed.instance_id}}));
            EXPECT_EQ(inst->state, InstanceState::Running);
            // The redelivered event is forwarded to the promoted instance.
            EXPECT_TRUE(r.handle(e).forwarded);
            ASSERT_TRUE(testsupport::wait_until([&] { return r.inbox->size() == 1; }, 5s));
        } else {
            EXPECT_EQ(inst->state, InstanceState::Failed) << static_cast<int>(step);
            EXPECT_TRUE(r.idp.list().empty());
            EXPECT_TRUE(r.sim.list_workloads().empty());
            EXPECT_TRUE(r.handle(e).spawned);
        }
        EXPECT_EQ(r.live_count("a", "t1"), 1u);
        EXPECT_TRUE(r.orch->recover(r.clock.now()).empty());
    }
}

TEST(Orchestrator, MessagesQueuedWhileProvisioningAreFlushedOnPromote) {
    Rig r;
    r.agent("a", "recorder");
    r.thread("a", "t1");
    r.orch->set_fault_hook([](SpawnStep s, const Instance&) {
        if (s == SpawnStep::WorkloadCreated) {
            throw SimulatedCrash();
        }
    });
    EXPECT_THROW(r.handle(r.post("t1", "lost-with-process")), SimulatedCrash);
    r.restart();
    auto q1 = r.handle(r.post("t1", "q1"));
    auto q2 = r.handle(r.post("t1", "q2"));
    EXPECT_TRUE(q1.queued);
    EXPECT_TRUE(q2.queued);
    r.orch->recover(r.clock.now());
    ASSERT_TRUE(testsupport::wait_until([&] { return r.inbox->size() == 2; }, 5s));
    auto got = r.inbox->snapshot();
    EXPECT_EQ(got[0]["text"], "q1");
    EXPECT_EQ(got[1]["text"], "q2");
}

TEST(Orchestrator, OrphanWorkloadIdentityCleanedUp) {
    Rig r;
    auto stray = r.idp.mint_workload_identity("inst-never-recorded", "a", "t1");
    auto keep = r.idp.provision_persistent("device", "prov");
    auto actions = r.orch->recover(r.clock.now());
    EXPECT_EQ(actions, (std::vector<CorrectiveAction>{{"delete_identity", stray.identity_id}}));
    EXPECT_TRUE(r.idp.find(keep.identity_id));
}

TEST(Orchestrator, ConcurrentEventsOnOneThreadSpawnOnce) {
    Rig r;
    r.agent("a");
    r.thread("a", "t1");
    std::vector<events::Event> evs;
    for (int i = 0; i < 32; ++i) {
        evs.push_back(r.post("t1", "m" + std::to_string(i)));
    }
    std::atomic<int> spawned{0};
    std::vector<std::thread> ts;
    for (int w = 0; w < 8; ++w) {
        ts.emplace_back([&, w] {
            for (int i = w; i < 32; i += 8) {
                if (r.handle(evs[i]).spawned) {
                    ++spawned;
                }
            }
        });
    }
    for (auto& t : ts) {
        t.join();
    }
    EXPECT_EQ(spawned, 1);
    EXPECT_EQ(r.runner.creates, 1);
}

TEST(Orchestrator, TwoOrchestratorsShareTheLiveClaim) {
    Rig r;
    r.agent("a");
    r.thread("a", "t1");
    Orchestrator other(r.store, r.bus, r.reg, r.threads, r.idp, r.runner);
    auto e1 = r.post("t1", "x");
    auto e2 = r.post("t1", "y");
    std::atomic<int> spawned{0};
    std::atomic<int> refused{0};
    std::thread a([&] {
        try {
            spawned += r.orch->handle_message_event(e1, r.clock.now()).spawned;
        } catch (const Error& e) {
            refused += e.code() == Errc::SpawnFailed;
        }
    });
    std::thread b([&] {
        try {
            spawned += other.handle_message_event(e2, r.clock.now()).spawned;
        } catch (const Error& e) {
            refused += e.code() == Errc::SpawnFailed;
        }
    });
    a.join();
    b.join();
    EXPECT_EQ(r.sim.list_workloads().size(), 1u);
    EXPECT_EQ(r.store.scan("live/").size(), 1u);
    EXPECT_EQ(spawned + refused, 2);
    EXPECT_GE(spawned, 1);
}

TEST(Orchestrator, DefaultSweepPeriod) {
    EXPECT_EQ(default_sweep_period(300s), Millis{30'000});
    EXPECT_EQ(default_sweep_period(5s), Millis{1000});
    EXPECT_EQ(default_sweep_period(1s), Millis{1000});
}

// Randomized schedules of messages, keep-alives, sweeps, clock jumps, lost
// workloads and runner outages. After every step each (agent, thread) has at
// most one live instance, live instances match the runner one-to-one, and
// finished instances hold neither identity nor workload.
TEST(Orchestrator, SingleInstanceProperty) {
    std::mt19937 rng(20240601);
    int violations = 0;
    for (int schedule = 0; schedule < 1000; ++schedule) {
        Rig r;
        r.agent("a", "quiet", 30);
        r.agent("b", "quiet", 60);
        std::vector<std::pair<std::string, std::string>> pairs;
        for (int t = 0; t < 3; ++t) {
            auto agent = t % 2 == 0 ? "a" : "b";
            auto tid = "t" + std::to_string(t);
            r.thread(agent, tid);
            pairs.emplace_back(agent, tid);
        }
        std::vector<events::Event> seen;
        int steps = 10 + static_cast<int>(rng() % 30);
        for (int s = 0; s < steps; ++s) {
            auto& [agent, tid] = pairs[rng() % pairs.size()];
            switch (rng() % 9) {
            case 0:
            case 1:
            case 2: {
                seen.push_back(r.post(tid, "m"));
                try {
                    r.handle(seen.back());
                } catch (const Error&) {
                }
                break;
            }
            case 3:
                if (!seen.empty()) {
                    try {
                        r.handle(seen[rng() % seen.size()]);
                    } catch (const Error&) {
                    }
                }
                break;
            case 4:
                if (auto live = r.orch->live_instance(agent, tid)) {
                    try {
                        r.orch->record_keepalive(live->instance_id, r.clock.now());
                    } catch (const Error&) {
                    }
                }
                break;
            case 5:
                r.orch->sweep_idle(r.clock.now());
                break;
            case 6:
                r.clock.advance(Millis{static_cast<int>(rng() % 40'000)});
                break;
            case 7:
                r.runner.fail_stop = !r.runner.fail_stop && rng() % 3 == 0;
                break;
            default:
                if (auto live = r.orch->live_instance(agent, tid); live && !live->workload_id.empty()) {
                    try {
                        r.sim.stop_workload(live->workload_id);
                    } catch (const Error&) {
                    }
                }
            }
            std::map<std::pair<std::string, std::string>, int> live;
            std::set<std::string> live_workloads;
            for (const auto& i : r.orch->instances()) {
                if (is_live(i.state)) {
                    ++live[{i.agent_id, i.thread_id}];
                    if (!i.workload_id.empty()) {
                        live_workloads.insert(i.workload_id);
                    }
                } else {
                    if (!i.identity_id.empty() || !i.workload_id.empty()) {
                        ++violations;
                    }
                    if (r.idp.find_by_subject(identity::IdentityClass::EphemeralWorkload,
                                              i.instance_id)) {
                        ++violations;
                    }
                }
                if (!i.workload_id.empty() && i.identity_id.empty()) {
                    ++violations;
                }
            }
            for (const auto& [k, n] : live) {
                if (n > 1) {
                    ++violations;
                }
            }
            for (const auto& w : r.sim.list_workloads()) {
                if (live_workloads.count(w.workload_id) == 0) {
                    ++violations;
                }
            }
        }
        ASSERT_EQ(violations, 0) << "schedule " << schedule;
    }
}

// Keep-alives every p <= idle/2 with sweeps every idle/2 never reclaim; once
// they stop at T the first sweep after T + idle reclaims.
TEST(Orchestrator, KeepaliveSafetyAndLiveness) {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Rig r;
        int idle_s = 2 + static_cast<int>(rng() % 60);
        r.agent("a", "quiet", idle_s);
        r.thread("a", "t1");
        auto id = r.handle(r.post("t1", "x")).instance_id;
        Millis idle{idle_s * 1000};
        Millis period{1 + static_cast<long>(rng() % (idle.count() / 2))};
        Millis sweep_period{std::max<long>(1, static_cast<long>(rng() % (idle.count() / 2)) + 1)};
        Millis start = r.clock.now();
        Millis horizon = start + 20 * idle;
        Millis next_ka = start + period;
        Millis next_sweep = start + sweep_period;
        while (true) {
            Millis t = std::min(next_ka, next_sweep);
            if (t > horizon) {
                break;
            }
            r.clock.set(t);
            if (t == next_ka) {
                r.orch->record_keepalive(id, t);
                next_ka += period;
            }
            if (t == next_sweep) {
                ASSERT_TRUE(r.orch->sweep_idle(t).empty()) << "trial " << trial;
                next_sweep += sweep_period;
            }
        }
        Millis last_ka = r.orch->find_instance(id)->last_active_ts;
        Millis reclaimed_at{-1};
        for (Millis t = next_sweep; reclaimed_at.count() < 0; t += sweep_period) {
            if (!r.orch->sweep_idle(t).empty()) {
                reclaimed_at = t;
            }
        }
        EXPECT_GT(reclaimed_at, last_ka + idle);
        EXPECT_LE(reclaimed_at, last_ka + idle + sweep_period);
        EXPECT_EQ(r.orch->find_instance(id)->state, InstanceState::Stopped);
    }
}
