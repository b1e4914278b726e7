#include "agynlite/orchestrator.hpp"

#include <algorithm>

#include "agynlite/crypto.hpp"
#include "agynlite/error.hpp"

namespace agynlite::orchestrator {

using nlohmann::json;

namespace {

std::string instance_key(std::string_view id) { return "instance/" + std::string(id); }

std::string live_key(std::string_view agent_id, std::string_view thread_id) {
    return "live/" + std::string(agent_id) + "/" + std::string(thread_id);
}

std::string processed_key(std::string_view event_id) {
    return "orch/processed/" + std::string(event_id);
}

Instance instance_from_json(const json& doc) {
    Instance i;
    i.instance_id = doc.at("instance_id").get<std::string>();
    i.agent_id = doc.at("agent_id").get<std::string>();
    i.thread_id = doc.at("thread_id").get<std::string>();
    i.definition_revision = doc.at("definition_revision").get<std::uint64_t>();
    i.state = *state_from_string(doc.at("state").get<std::string>());
    i.identity_id = doc.at("identity_id").get<std::string>();
    i.workload_id = doc.at("workload_id").get<std::string>();
    i.last_active_ts = Millis{doc.at("last_active_ts").get<std::int64_t>()};
    i.created_ts = Millis{doc.at("created_ts").get<std::int64_t>()};
    i.state_ts = Millis{doc.value("state_ts", std::int64_t{0})};
    i.idle_timeout = Millis{doc.at("idle_timeout_ms").get<std::int64_t>()};
    i.error = doc.value("error", "");
    return i;
}

// Runner-wide name of an agent volume for one thread: the workspace follows
// the thread across spawns.
std::string volume_name(const std::string& agent_id, const std::string& thread_id,
                        const std::string& volume) {
    return agent_id + "." + thread_id + "." + volume;
}

json message_json(const json& payload) {
    return json{{"message_id", payload.value("message_id", "")},
                {"thread_id", payload.value("thread_id", "")},
                {"author", payload.value("author", "")},
                {"author_kind", payload.value("author_kind", "")},
                {"text", payload.value("text", "")}};
}

} // namespace

std::string_view to_string(InstanceState s) {
    switch (s) {
    case InstanceState::Provisioning: return "Provisioning";
    case InstanceState::Running: return "Running";
    case InstanceState::Stopping: return "Stopping";
    case InstanceState::Stopped: return "Stopped";
    case InstanceState::Failed: return "Failed";
    }
    return "";
}

std::optional<InstanceState> state_from_string(std::string_view s) {
    for (auto st : {InstanceState::Provisioning, InstanceState::Running, InstanceState::Stopping,
                    InstanceState::Stopped, InstanceState::Failed}) {
        if (to_string(st) == s) {
            return st;
        }
    }
    return std::nullopt;
}

bool is_live(InstanceState s) {
    return s == InstanceState::Provisioning || s == InstanceState::Running ||
           s == InstanceState::Stopping;
}

bool transition_allowed(InstanceState from, InstanceState to) {
    using S = InstanceState;
    return (from == S::Provisioning && (to == S::Running || to == S::Failed)) ||
           (from == S::Running && (to == S::Stopping || to == S::Failed)) ||
           (from == S::Stopping && to == S::Stopped);
}

json to_json(const Instance& i) {
    return json{{"instance_id", i.instance_id},
                {"agent_id", i.agent_id},
                {"thread_id", i.thread_id},
                {"definition_revision", i.definition_revision},
                {"state", to_string(i.state)},
                {"identity_id", i.identity_id},
                {"workload_id", i.workload_id},
                {"last_active_ts", i.last_active_ts.count()},
                {"created_ts", i.created_ts.count()},
                {"state_ts", i.state_ts.count()},
                {"idle_timeout_ms", i.idle_timeout.count()},
                {"error", i.error}};
}

Orchestrator::Orchestrator(store::Store& store, events::Bus& bus, registry::Registry& registry,
                           threads::ThreadStore& threads, identity::IdentityProvider& identities,
                           runner::Runner& runner, OrchestratorOptions options)
    : store_(store),
      bus_(bus),
      registry_(registry),
      threads_(threads),
      identities_(identities),
      runner_(runner),
      options_(options) {
    for (const auto& rec : store_.scan("instance/")) {
        auto i = instance_from_json(json::parse(rec.value));
        instances_[i.instance_id] = std::move(i);
    }
    std::vector<std::pair<std::uint64_t, std::string>> done;
    for (const auto& rec : store_.scan("orch/processed/")) {
        done.emplace_back(std::stoull(rec.value), rec.key.substr(15));
    }
    std::sort(done.begin(), done.end());
    for (auto& [n, id] : done) {
        processed_counter_ = std::max(processed_counter_, n);
        processed_.insert(id);
        processed_order_.push_back(std::move(id));
    }
}

std::shared_ptr<std::mutex> Orchestrator::thread_lock(const std::string& thread_id) {
    std::lock_guard lock(locks_mutex_);
    auto& m = thread_locks_[thread_id];
    if (!m) {
        m = std::make_shared<std::mutex>();
    }
    return m;
}

bool Orchestrator::processed(const std::string& event_id) const {
    std::lock_guard lock(processed_mutex_);
    return processed_.count(event_id) != 0;
}

void Orchestrator::mark_processed(const std::string& event_id) {
    std::lock_guard lock(processed_mutex_);
    if (!processed_.insert(event_id).second) {
        return;
    }
    processed_order_.push_back(event_id);
    store_.put(processed_key(event_id), std::to_string(++processed_counter_));
    while (processed_order_.size() > options_.processed_retention) {
        auto old = std::move(processed_order_.front());
        processed_order_.pop_front();
        processed_.erase(old);
        if (auto rec = store_.get(processed_key(old))) {
            store_.remove(rec->key, rec->version);
        }
    }
}

void Orchestrator::persist_locked(const Instance& i) {
    store_.put(instance_key(i.instance_id), to_json(i).dump());
}

void Orchestrator::publish_state(const Instance& i) {
    json payload{{"instance_id", i.instance_id}, {"agent_id", i.agent_id},
                 {"thread_id", i.thread_id},     {"state", to_string(i.state)},
                 {"ts", i.state_ts.count()},       {"revision", i.definition_revision},
                 {"last_active_ts", i.last_active_ts.count()}};
    if (!i.error.empty()) {
        payload["error"] = i.error;
    }
    bus_.publish(events::kInstanceState, std::move(payload));
}

void Orchestrator::update(const std::string& instance_id, const std::function<void(Instance&)>& fn) {
    std::lock_guard lock(table_mutex_);
    auto& i = instances_.at(instance_id);
    fn(i);
    persist_locked(i);
}

void Orchestrator::set_state(const std::string& instance_id, InstanceState to, Millis now) {
    Instance snapshot;
    {
        std::lock_guard lock(table_mutex_);
        auto& i = instances_.at(instance_id);
        if (!transition_allowed(i.state, to)) {
            fail(Errc::WrongState, "illegal transition " + std::string(to_string(i.state)) +
                                       " -> " + std::string(to_string(to)) + " for " + instance_id);
        }
        i.state = to;
        i.state_ts = now;
        if (!is_live(to)) {
            i.identity_id.clear();
            i.workload_id.clear();
        }
        persist_locked(i);
        snapshot = i;
    }
    publish_state(snapshot);
}

void Orchestrator::drop_live_index(const Instance& i) {
    auto key = live_key(i.agent_id, i.thread_id);
    if (auto rec = store_.get(key); rec && rec->value == i.instance_id) {
        try {
            store_.remove(key, rec->version);
        } catch (const Error&) {
        }
    }
}

ReconcileOutcome Orchestrator::handle_message_event(const events::Event& event, Millis now) {
    if (event.topic != events::kThreadMessage) {
        fail(Errc::InvalidArgument, "orchestrator only handles thread.message events");
    }
    auto thread_id = event.payload.value("thread_id", "");
    auto guard = thread_lock(thread_id);
    std::lock_guard lock(*guard);

    ReconcileOutcome out;
    if (processed(event.id)) {
        out.noop = true;
        return out;
    }
    auto thread = threads_.find_thread(thread_id);
    if (!thread) {
        mark_processed(event.id);
        fail(Errc::NotFound, "thread '" + thread_id + "' not found");
    }
    if (event.payload.value("author_kind", "") == "agent" &&
        event.payload.value("author", "") == "agent:" + thread->agent_id) {
        mark_processed(event.id);
        out.ignored = true;
        return out;
    }

    auto message = message_json(event.payload);
    auto live = live_instance(thread->agent_id, thread_id);
    if (live && live->state == InstanceState::Stopping) {
        std::string err;
        if (!stop_instance(live->instance_id, now, &err)) {
            fail(Errc::SpawnFailed, "previous instance " + live->instance_id +
                                        " is still stopping: " + err);
        }
        out.actions.push_back("complete_stop " + live->instance_id);
        live.reset();
    }
    if (live && live->state == InstanceState::Running) {
        try {
            runner_.deliver(live->workload_id, message);
            update(live->instance_id,
                   [&](Instance& i) { i.last_active_ts = std::max(i.last_active_ts, now); });
            out.forwarded = true;
            out.instance_id = live->instance_id;
            out.actions.push_back("forward " + live->instance_id);
        } catch (const Error& e) {
            if (e.code() != Errc::UnknownWorkload) {
                throw;
            }
            // Workload vanished underneath us: fail the record, spawn afresh.
            fail_instance(live->instance_id, "workload lost", now);
            out.actions.push_back("fail " + live->instance_id);
            live.reset();
        }
    } else if (live && live->state == InstanceState::Provisioning) {
        std::lock_guard t(table_mutex_);
        pending_[live->instance_id].push_back(message);
        out.queued = true;
        out.instance_id = live->instance_id;
        out.actions.push_back("queue " + live->instance_id);
    }
    if (!live) {
        try {
            spawn(*thread, message, now, out);
        } catch (const Error& e) {
            if (e.code() == Errc::SpawnFailed) {
                mark_processed(event.id);
            }
            throw;
        }
    }
    mark_processed(event.id);
    return out;
}

void Orchestrator::spawn(const threads::Thread& thread, const json& message, Millis now,
                         ReconcileOutcome& out) {
    Instance inst;
    inst.instance_id = crypto::random_id("inst");
    inst.agent_id = thread.agent_id;
    inst.thread_id = thread.thread_id;
    inst.state = InstanceState::Provisioning;
    inst.created_ts = now;
    inst.state_ts = now;
    inst.last_active_ts = now;
    const auto id = inst.instance_id;

    try {
        store_.put(live_key(inst.agent_id, inst.thread_id), id, 0);
    } catch (const Error& e) {
        if (e.code() == Errc::VersionConflict) {
            fail(Errc::SpawnFailed, "another instance is live for " + inst.agent_id + "/" +
                                        inst.thread_id);
        }
        throw;
    }
    {
        std::lock_guard lock(table_mutex_);
        instances_[id] = inst;
        pending_[id].push_back(message);
        persist_locked(inst);
    }
    publish_state(inst);
    out.instance_id = id;
    out.actions.push_back("claim " + id);
    auto hook = [&](SpawnStep step) {
        if (fault_hook_) {
            fault_hook_(step, *find_instance(id));
        }
    };
    hook(SpawnStep::Claimed);

    std::string workload_id;
    std::string identity_id;
    try {
        auto harness = registry_.resolve_harness(inst.agent_id);
        update(id, [&](Instance& i) {
            i.definition_revision = harness.revision;
            i.idle_timeout = std::chrono::seconds(harness.idle_timeout_s);
        });
        out.actions.push_back("resolve_harness rev " + std::to_string(harness.revision));
        hook(SpawnStep::HarnessResolved);

        auto ident = identities_.mint_workload_identity(id, inst.agent_id, inst.thread_id);
        identity_id = ident.identity_id;
        update(id, [&](Instance& i) { i.identity_id = identity_id; });
        out.actions.push_back("mint_identity " + identity_id);
        hook(SpawnStep::IdentityMinted);

        runner::WorkloadSpec spec;
        spec.workload_id = crypto::random_id("wl");
        for (const auto& c : harness.containers) {
            spec.containers.push_back(runner::ContainerLaunch{c.name, c.behavior, c.env});
        }
        for (const auto& v : harness.volumes) {
            spec.volume_mounts.push_back(runner::VolumeMount{
                volume_name(inst.agent_id, inst.thread_id, v.name), v.mount_path});
        }
        spec.identity_token = ident.credential;
        json recent = json::array();
        for (const auto& m : threads_.messages(inst.thread_id, options_.context_messages)) {
            recent.push_back(threads::to_json(m));
        }
        spec.thread_context = json{{"thread_id", inst.thread_id},
                                   {"instance_id", id},
                                   {"agent_id", inst.agent_id},
                                   {"revision", harness.revision},
                                   {"system_prompt", harness.system_prompt},
                                   {"model", harness.model},
                                   {"keepalive_interval_ms", harness.keepalive_interval_s * 1000},
                                   {"messages", std::move(recent)}};
        auto handle = runner_.create_workload(spec);
        workload_id = handle.id();
        update(id, [&](Instance& i) { i.workload_id = workload_id; });
        out.actions.push_back("create_workload " + workload_id);
        hook(SpawnStep::WorkloadCreated);

        update(id, [&](Instance& i) { i.last_active_ts = std::max(i.last_active_ts, now); });
        set_state(id, InstanceState::Running, now);
        flush_pending(id, workload_id);
        out.spawned = true;
    } catch (const SimulatedCrash&) {
        throw;
    } catch (const std::exception& e) {
        if (!workload_id.empty()) {
            try {
                runner_.stop_workload(workload_id);
            } catch (const std::exception&) {
            }
        }
        if (!identity_id.empty()) {
            try {
                identities_.delete_identity(identity_id);
            } catch (const std::exception&) {
            }
        }
        {
            std::lock_guard lock(table_mutex_);
            pending_.erase(id);
        }
        fail_instance(id, e.what(), now);
        fail(Errc::SpawnFailed, "spawn of " + id + " failed: " + e.what());
    }
}

void Orchestrator::flush_pending(const std::string& instance_id, const std::string& workload_id) {
    std::deque<json> queued;
    {
        std::lock_guard lock(table_mutex_);
        if (auto it = pending_.find(instance_id); it != pending_.end()) {
            queued.swap(it->second);
            pending_.erase(it);
        }
    }
    for (const auto& m : queued) {
        runner_.deliver(workload_id, m);
    }
}

void Orchestrator::fail_instance(const std::string& instance_id, const std::string& reason,
                                 Millis now) {
    // Callers stop the workload first; whatever identity is left goes now.
    if (auto inst = find_instance(instance_id); inst && !inst->identity_id.empty()) {
        try {
            identities_.delete_identity(inst->identity_id);
        } catch (const Error&) {
        }
    }
    Instance snapshot;
    {
        std::lock_guard lock(table_mutex_);
        auto& i = instances_.at(instance_id);
        pending_.erase(instance_id);
        i.error = reason;
        i.identity_id.clear();
        i.workload_id.clear();
        i.state = InstanceState::Failed;
        i.state_ts = now;
        persist_locked(i);
        snapshot = i;
    }
    drop_live_index(snapshot);
    publish_state(snapshot);
}

bool Orchestrator::stop_instance(const std::string& instance_id, Millis now, std::string* error) {
    auto inst = *find_instance(instance_id);
    if (inst.state == InstanceState::Running) {
        set_state(instance_id, InstanceState::Stopping, now);
    }
    if (!inst.workload_id.empty()) {
        try {
            runner_.stop_workload(inst.workload_id);
        } catch (const Error& e) {
            if (e.code() != Errc::UnknownWorkload) {
                if (error != nullptr) {
                    *error = e.what();
                }
                return false;
            }
        }
    }
    // Only once the runner confirmed the stop does the identity go away.
    if (!inst.identity_id.empty()) {
        try {
            identities_.delete_identity(inst.identity_id);
        } catch (const Error& e) {
            if (e.code() != Errc::NotFound) {
                if (error != nullptr) {
                    *error = e.what();
                }
                return false;
            }
        }
    }
    set_state(instance_id, InstanceState::Stopped, now);
    drop_live_index(inst);
    return true;
}

void Orchestrator::record_keepalive(std::string_view instance_id, Millis now) {
    std::lock_guard lock(table_mutex_);
    auto it = instances_.find(std::string(instance_id));
    if (it == instances_.end()) {
        fail(Errc::UnknownInstance, "unknown instance '" + std::string(instance_id) + "'");
    }
    auto& i = it->second;
    if (i.state != InstanceState::Running) {
        fail(Errc::WrongState, "instance '" + i.instance_id + "' is " +
                                   std::string(to_string(i.state)));
    }
    if (now > i.last_active_ts) {
        i.last_active_ts = now;
        persist_locked(i);
    }
}

std::vector<std::string> Orchestrator::sweep_idle(Millis now) {
    std::vector<std::pair<std::string, std::string>> candidates;
    {
        std::lock_guard lock(table_mutex_);
        for (const auto& [id, i] : instances_) {
            if (i.state == InstanceState::Running && now - i.last_active_ts > i.idle_timeout) {
                candidates.emplace_back(id, i.thread_id);
            }
        }
    }
    std::vector<std::string> reclaimed;
    std::vector<SweepFailure> failures;
    for (const auto& [id, thread_id] : candidates) {
        auto guard = thread_lock(thread_id);
        std::lock_guard lock(*guard);
        auto inst = find_instance(id);
        // A keep-alive or message may have landed since the scan.
        if (!inst || inst->state != InstanceState::Running ||
            now - inst->last_active_ts <= inst->idle_timeout) {
            continue;
        }
        std::string err;
        try {
            if (stop_instance(id, now, &err)) {
                reclaimed.push_back(id);
                continue;
            }
        } catch (const std::exception& e) {
            err = e.what();
        }
        failures.push_back(SweepFailure{id, err});
    }
    {
        std::lock_guard lock(table_mutex_);
        sweep_failures_ = std::move(failures);
    }
    return reclaimed;
}

std::vector<CorrectiveAction> Orchestrator::recover(Millis now) {
    return recover(runner_.list_workloads(), now);
}

std::vector<CorrectiveAction> Orchestrator::recover(
    const std::vector<runner::WorkloadInfo>& live_workloads, Millis now) {
    std::vector<CorrectiveAction> actions;
    std::set<std::string> running_workloads;
    for (const auto& w : live_workloads) {
        running_workloads.insert(w.workload_id);
    }

    std::set<std::string> referenced;
    std::set<std::string> live_ids;
    for (const auto& i : instances()) {
        if (is_live(i.state)) {
            live_ids.insert(i.instance_id);
            if (!i.workload_id.empty()) {
                referenced.insert(i.workload_id);
            }
        }
    }

    for (const auto& w : running_workloads) {
        if (referenced.count(w) == 0) {
            try {
                runner_.stop_workload(w);
            } catch (const Error& e) {
                if (e.code() != Errc::UnknownWorkload) {
                    throw;
                }
            }
            actions.push_back({"stop_orphan", w});
        }
    }

    for (const auto& i : instances()) {
        if (!is_live(i.state)) {
            continue;
        }
        bool has_workload = !i.workload_id.empty() && running_workloads.count(i.workload_id) != 0;
        if (i.state == InstanceState::Stopping) {
            if (stop_instance(i.instance_id, now, nullptr)) {
                actions.push_back({"complete_stop", i.instance_id});
            }
        } else if (has_workload && i.state == InstanceState::Running) {
            continue;
        } else if (has_workload && !i.identity_id.empty()) {
            update(i.instance_id, [&](Instance& x) { x.last_active_ts = now; });
            set_state(i.instance_id, InstanceState::Running, now);
            flush_pending(i.instance_id, i.workload_id);
            actions.push_back({"promote", i.instance_id});
        } else {
            if (has_workload) {
                try {
                    runner_.stop_workload(i.workload_id);
                } catch (const Error&) {
                }
                actions.push_back({"stop_orphan", i.workload_id});
            }
            if (!i.identity_id.empty()) {
                try {
                    identities_.delete_identity(i.identity_id);
                } catch (const Error&) {
                }
                actions.push_back({"delete_identity", i.identity_id});
            }
            fail_instance(i.instance_id, "lost during orchestrator restart", now);
            actions.push_back({"fail_instance", i.instance_id});
        }
    }

    // Workload identities minted for instances that never got recorded.
    std::set<std::string> still_live;
    for (const auto& i : instances()) {
        if (is_live(i.state)) {
            still_live.insert(i.instance_id);
        }
    }
    for (const auto& ident : identities_.list()) {
        if (ident.identity_class == identity::IdentityClass::EphemeralWorkload &&
            still_live.count(ident.subject) == 0) {
            try {
                identities_.delete_identity(ident.identity_id);
                actions.push_back({"delete_identity", ident.identity_id});
            } catch (const Error&) {
            }
        }
    }

    for (const auto& rec : store_.scan("live/")) {
        if (still_live.count(rec.value) == 0) {
            try {
                store_.remove(rec.key, rec.version);
                actions.push_back({"drop_index", rec.key});
            } catch (const Error&) {
            }
        }
    }
    return actions;
}

std::optional<Instance> Orchestrator::find_instance(std::string_view instance_id) const {
    std::lock_guard lock(table_mutex_);
    auto it = instances_.find(std::string(instance_id));
    if (it == instances_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::optional<Instance> Orchestrator::live_instance(std::string_view agent_id,
                                                    std::string_view thread_id) const {
    auto rec = store_.get(live_key(agent_id, thread_id));
    if (!rec) {
        return std::nullopt;
    }
    auto inst = find_instance(rec->value);
    if (!inst || !is_live(inst->state)) {
        return std::nullopt;
    }
    return inst;
}

std::vector<Instance> Orchestrator::instances() const {
    std::lock_guard lock(table_mutex_);
    std::vector<Instance> out;
    for (const auto& [_, i] : instances_) {
        out.push_back(i);
    }
    return out;
}

std::vector<SweepFailure> Orchestrator::last_sweep_failures() const {
    std::lock_guard lock(table_mutex_);
    return sweep_failures_;
}

Millis default_sweep_period(Millis idle_timeout) {
    return std::max<Millis>(idle_timeout / 10, std::chrono::seconds(1));
}

OrchestratorLoop::OrchestratorLoop(Orchestrator& orchestrator, events::Bus& bus,
                                   const Clock& clock, LoopOptions options)
    : orchestrator_(orchestrator), bus_(bus), clock_(clock), options_(std::move(options)) {
    options_.workers = std::max<std::size_t>(1, options_.workers);
}

OrchestratorLoop::~OrchestratorLoop() { stop(); }

void OrchestratorLoop::start() {
    if (running_.exchange(true)) {
        return;
    }
    subscription_.emplace(bus_.subscribe(events::kThreadMessage, options_.group));
    for (std::size_t n = 0; n < options_.workers; ++n) {
        workers_.push_back(std::make_unique<Worker>());
    }
    for (auto& w : workers_) {
        Worker* raw = w.get();
        raw->thread = std::thread([this, raw] { work(*raw, *subscription_); });
    }
    consumer_ = std::thread([this] { consume(); });
    if (options_.sweep_period.count() > 0) {
        sweeper_ = std::thread([this] { sweep(); });
    }
}

void OrchestratorLoop::stop() {
    if (!running_.exchange(false)) {
        return;
    }
    sweep_cv_.notify_all();
    for (auto& w : workers_) {
        w->cv.notify_all();
    }
    if (consumer_.joinable()) {
        consumer_.join();
    }
    for (auto& w : workers_) {
        if (w->thread.joinable()) {
            w->thread.join();
        }
    }
    if (sweeper_.joinable()) {
        sweeper_.join();
    }
    workers_.clear();
    subscription_.reset();
}

void OrchestratorLoop::consume() {
    while (running_) {
        auto e = subscription_->next(std::chrono::milliseconds(100));
        if (!e) {
            continue;
        }
        auto h = std::hash<std::string>{}(e->payload.value("thread_id", ""));
        auto& w = *workers_[h % workers_.size()];
        {
            std::lock_guard lock(w.mutex);
            w.queue.push_back(std::move(*e));
        }
        w.cv.notify_one();
    }
}

void OrchestratorLoop::work(Worker& w, events::Subscription& sub) {
    for (;;) {
        events::Event e;
        {
            std::unique_lock lock(w.mutex);
            w.cv.wait(lock, [&] { return !w.queue.empty() || !running_; });
            if (!running_) {
                return;
            }
            e = std::move(w.queue.front());
            w.queue.pop_front();
        }
        try {
            orchestrator_.handle_message_event(e, clock_.now());
        } catch (const SimulatedCrash&) {
            // Dies without acking; the bus redelivers.
            continue;
        } catch (const std::exception&) {
            // Failure already recorded on the instance and published.
        }
        sub.ack(e.id);
    }
}

void OrchestratorLoop::sweep() {
    std::unique_lock lock(sweep_mutex_);
    while (running_) {
        sweep_cv_.wait_for(lock, options_.sweep_period, [&] { return !running_.load(); });
        if (!running_) {
            return;
        }
        lock.unlock();
        try {
            orchestrator_.sweep_idle(clock_.now());
        } catch (const std::exception&) {
        }
        lock.lock();
    }
}

} // namespace agynlite::orchestrator
