#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "agynlite/clock.hpp"
#include "agynlite/store.hpp"

namespace agynlite::events {

inline constexpr std::string_view kThreadMessage = "thread.message";
inline constexpr std::string_view kInstanceState = "instance.state";
inline constexpr std::string_view kIdentityChange = "identity.change";
inline constexpr std::string_view kConfigApplied = "config.applied";

bool known_topic(std::string_view topic);

struct Event {
    std::string id;
    std::string topic;
    nlohmann::json payload;
    Millis ts{0};
    // Position within the topic log, starting at 1.
    std::uint64_t seq = 0;
};

struct BusOptions {
    Millis redelivery_timeout{5000};
};

enum class StartAt { Earliest, Latest };

class Bus;
struct GroupState;

// One member of a consumer group. Several Subscription objects may share a
// group; each event is handed to at least one of them. Dropping a
// Subscription without acking behaves like a consumer crash: its in-flight
// events are redelivered once the redelivery timeout passes.
class Subscription {
public:
    Subscription(Bus& bus, std::shared_ptr<GroupState> group);

    std::optional<Event> poll();
    // Waits up to `wait` of wall time.
    std::optional<Event> next(std::chrono::milliseconds wait);
    void ack(const std::string& event_id);

    const std::string& topic() const;
    const std::string& group() const;

private:
    Bus* bus_;
    std::shared_ptr<GroupState> group_;
};

// In-process pub/sub with at-least-once delivery per consumer group.
// Events and group progress are persisted through the store, so a restarted
// bus resumes every group from its last acknowledged position.
class Bus {
public:
    Bus(store::Store& store, const Clock& clock, BusOptions options = {});

    std::string publish(std::string_view topic, nlohmann::json payload);

    Subscription subscribe(std::string_view topic, std::string_view group,
                           StartAt start = StartAt::Earliest);

    // Forgets a consumer group and its persisted watermark. Live
    // subscriptions on it keep working but no longer persist.
    void drop_group(std::string_view topic, std::string_view group);

    // Every event published so far on the topic, in order.
    std::vector<Event> history(std::string_view topic) const;

    // Wakes blocked subscribers; next() returns nothing afterwards.
    void shutdown();

    const BusOptions& options() const { return options_; }

private:
    friend class Subscription;

    struct TopicLog {
        std::vector<Event> events;
        std::unordered_map<std::string, std::uint64_t> seq_by_id;
    };

    std::optional<Event> poll_locked(GroupState& group);
    void ack(GroupState& group, const std::string& event_id);
    void persist_group_locked(const GroupState& group);
    void load();

    store::Store& store_;
    const Clock& clock_;
    BusOptions options_;

    mutable std::mutex mutex_;
    std::condition_variable cv_;
    bool shutdown_ = false;
    std::uint64_t next_id_ = 1;
    std::map<std::string, TopicLog, std::less<>> topics_;
    std::map<std::string, std::shared_ptr<GroupState>, std::less<>> groups_;
};

} // namespace agynlite::events
