#include "agynlite/events.hpp"

#include <array>
#include <cstdio>

#include "agynlite/error.hpp"

namespace agynlite::events {

using nlohmann::json;

struct GroupState {
    std::string topic;
    std::string group;
    // Next never-delivered position (0-based index into the topic log).
    std::uint64_t next_offset = 0;
    // Every seq below the watermark is acknowledged.
    std::uint64_t watermark = 1;
    std::set<std::uint64_t> acked;
    // seq -> time after which it may be handed out again
    std::map<std::uint64_t, Millis> in_flight;
    bool dropped = false;
};

namespace {

constexpr std::array<std::string_view, 4> kTopics = {kThreadMessage, kInstanceState,
                                                     kIdentityChange, kConfigApplied};

std::string event_key(std::string_view topic, std::uint64_t seq) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%012llu", static_cast<unsigned long long>(seq));
    return "event/" + std::string(topic) + "/" + buf;
}

std::string group_key(std::string_view topic, std::string_view group) {
    return "evgroup/" + std::string(topic) + "/" + std::string(group);
}

std::string format_id(std::uint64_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ev-%06llu", static_cast<unsigned long long>(n));
    return buf;
}

json to_json(const Event& e) {
    return json{{"id", e.id}, {"topic", e.topic}, {"payload", e.payload}, {"ts", e.ts.count()},
                {"seq", e.seq}};
}

} // namespace

bool known_topic(std::string_view topic) {
    for (auto t : kTopics) {
        if (t == topic) {
            return true;
        }
    }
    return false;
}

Subscription::Subscription(Bus& bus, std::shared_ptr<GroupState> group)
    : bus_(&bus), group_(std::move(group)) {}

std::optional<Event> Subscription::poll() {
    std::lock_guard lock(bus_->mutex_);
    return bus_->poll_locked(*group_);
}

std::optional<Event> Subscription::next(std::chrono::milliseconds wait) {
    auto deadline = std::chrono::steady_clock::now() + wait;
    std::unique_lock lock(bus_->mutex_);
    while (!bus_->shutdown_) {
        if (auto e = bus_->poll_locked(*group_)) {
            return e;
        }
        auto now = std::chrono::steady_clock::now();
        if (now >= deadline) {
            break;
        }
        // Wake periodically so redeliveries are noticed without a publish.
        auto slice = std::min<std::chrono::steady_clock::duration>(deadline - now,
                                                                   std::chrono::milliseconds(50));
        bus_->cv_.wait_for(lock, slice);
    }
    return std::nullopt;
}

void Subscription::ack(const std::string& event_id) { bus_->ack(*group_, event_id); }

const std::string& Subscription::topic() const { return group_->topic; }
const std::string& Subscription::group() const { return group_->group; }

Bus::Bus(store::Store& store, const Clock& clock, BusOptions options)
    : store_(store), clock_(clock), options_(options) {
    load();
}

void Bus::load() {
    std::uint64_t max_id = 0;
    for (const auto& rec : store_.scan("event/")) {
        auto doc = json::parse(rec.value);
        Event e;
        e.id = doc.at("id").get<std::string>();
        e.topic = doc.at("topic").get<std::string>();
        e.payload = doc.at("payload");
        e.ts = Millis{doc.at("ts").get<std::int64_t>()};
        e.seq = doc.at("seq").get<std::uint64_t>();
        auto& log = topics_[e.topic];
        log.seq_by_id[e.id] = e.seq;
        log.events.push_back(std::move(e));
        max_id = std::max<std::uint64_t>(max_id, std::stoull(log.events.back().id.substr(3)));
    }
    next_id_ = max_id + 1;

    for (const auto& rec : store_.scan("evgroup/")) {
        auto doc = json::parse(rec.value);
        auto g = std::make_shared<GroupState>();
        g->topic = doc.at("topic").get<std::string>();
        g->group = doc.at("group").get<std::string>();
        g->watermark = doc.at("watermark").get<std::uint64_t>();
        for (auto seq : doc.at("acked")) {
            g->acked.insert(seq.get<std::uint64_t>());
        }
        // Unacked events past the watermark are delivered again.
        g->next_offset = g->watermark - 1;
        groups_[group_key(g->topic, g->group)] = std::move(g);
    }
}

std::string Bus::publish(std::string_view topic, json payload) {
    if (topic.empty() || !known_topic(topic)) {
        fail(Errc::InvalidArgument, "unknown topic '" + std::string(topic) + "'");
    }
    std::string id;
    {
        std::lock_guard lock(mutex_);
        auto& log = topics_[std::string(topic)];
        Event e;
        e.id = format_id(next_id_);
        e.topic = std::string(topic);
        e.payload = std::move(payload);
        e.ts = clock_.now();
        e.seq = log.events.size() + 1;
        // Durable before the caller sees the id.
        store_.put(event_key(topic, e.seq), to_json(e).dump());
        ++next_id_;
        id = e.id;
        log.seq_by_id[e.id] = e.seq;
        log.events.push_back(std::move(e));
    }
    cv_.notify_all();
    return id;
}

Subscription Bus::subscribe(std::string_view topic, std::string_view group, StartAt start) {
    std::lock_guard lock(mutex_);
    auto key = group_key(topic, group);
    auto it = groups_.find(key);
    if (it == groups_.end()) {
        auto g = std::make_shared<GroupState>();
        g->topic = std::string(topic);
        g->group = std::string(group);
        if (start == StartAt::Latest) {
            auto t = topics_.find(topic);
            std::uint64_t size = t == topics_.end() ? 0 : t->second.events.size();
            g->next_offset = size;
            g->watermark = size + 1;
        }
        persist_group_locked(*g);
        it = groups_.emplace(key, std::move(g)).first;
    }
    return Subscription(*this, it->second);
}

std::optional<Event> Bus::poll_locked(GroupState& group) {
    auto t = topics_.find(group.topic);
    if (t == topics_.end()) {
        return std::nullopt;
    }
    const auto& events = t->second.events;
    auto now = clock_.now();

    for (auto& [seq, due] : group.in_flight) {
        if (due <= now) {
            due = now + options_.redelivery_timeout;
            return events[seq - 1];
        }
    }
    while (group.next_offset < events.size()) {
        const auto& e = events[group.next_offset++];
        if (e.seq < group.watermark || group.acked.count(e.seq) != 0) {
            continue;
        }
        group.in_flight[e.seq] = now + options_.redelivery_timeout;
        return e;
    }
    return std::nullopt;
}

void Bus::ack(GroupState& group, const std::string& event_id) {
    std::lock_guard lock(mutex_);
    auto t = topics_.find(group.topic);
    if (t == topics_.end()) {
        return;
    }
    auto s = t->second.seq_by_id.find(event_id);
    if (s == t->second.seq_by_id.end()) {
        return;
    }
    auto seq = s->second;
    group.in_flight.erase(seq);
    if (seq < group.watermark || !group.acked.insert(seq).second) {
        return;
    }
    while (group.acked.count(group.watermark) != 0) {
        group.acked.erase(group.watermark);
        ++group.watermark;
    }
    persist_group_locked(group);
}

void Bus::drop_group(std::string_view topic, std::string_view group) {
    std::lock_guard lock(mutex_);
    auto key = group_key(topic, group);
    auto it = groups_.find(key);
    if (it != groups_.end()) {
        it->second->dropped = true;
        groups_.erase(it);
    }
    if (auto rec = store_.get(key)) {
        store_.remove(key, rec->version);
    }
}

void Bus::persist_group_locked(const GroupState& group) {
    if (group.dropped) {
        return;
    }
    json doc{{"topic", group.topic},
             {"group", group.group},
             {"watermark", group.watermark},
             {"acked", group.acked}};
    store_.put(group_key(group.topic, group.group), doc.dump());
}

std::vector<Event> Bus::history(std::string_view topic) const {
    std::lock_guard lock(mutex_);
    auto t = topics_.find(topic);
    return t == topics_.end() ? std::vector<Event>{} : t->second.events;
}

void Bus::shutdown() {
    {
        std::lock_guard lock(mutex_);
        shutdown_ = true;
    }
    cv_.notify_all();
}

} // namespace agynlite::events
