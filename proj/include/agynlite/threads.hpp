#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "agynlite/clock.hpp"
#include "agynlite/store.hpp"

namespace agynlite::threads {

struct Thread {
    std::string thread_id;
    std::string agent_id;
    // Principal subject of the creator, e.g. "user:alice".
    std::string creator;
    Millis created_ts{0};
};

struct Message {
    std::string message_id;
    std::string thread_id;
    std::uint64_t seq = 0;
    std::string author;
    // "user", "agent" or "service"
    std::string author_kind;
    std::string text;
    std::string in_reply_to;
    Millis ts{0};
};

nlohmann::json to_json(const Thread& t);
nlohmann::json to_json(const Message& m);

// Durable thread history. Survives every instance reclamation.
class ThreadStore {
public:
    ThreadStore(store::Store& store, const Clock& clock);

    // Empty thread_id picks a fresh one. Conflicts on an existing id.
    Thread create_thread(std::string_view thread_id, std::string_view agent_id,
                         std::string_view creator);
    std::optional<Thread> find_thread(std::string_view thread_id) const;
    std::vector<Thread> list_threads() const;

    Message append_message(std::string_view thread_id, std::string_view author,
                           std::string_view author_kind, std::string_view text,
                           std::string_view in_reply_to = {});
    // Most recent `limit` messages (0 = all), oldest first.
    std::vector<Message> messages(std::string_view thread_id, std::size_t limit = 0) const;

private:
    store::Store& store_;
    const Clock& clock_;
};

} // namespace agynlite::threads
