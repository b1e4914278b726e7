#include "agynlite/threads.hpp"

#include <cstdio>

#include "agynlite/crypto.hpp"
#include "agynlite/error.hpp"
#include "agynlite/registry.hpp"

namespace agynlite::threads {

using nlohmann::json;

namespace {

std::string thread_key(std::string_view id) { return "thread/" + std::string(id); }
std::string seq_key(std::string_view id) { return "msgseq/" + std::string(id); }

std::string message_key(std::string_view id, std::uint64_t seq) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%010llu", static_cast<unsigned long long>(seq));
    return "msg/" + std::string(id) + "/" + buf;
}

Thread thread_from_json(const json& doc) {
    return Thread{doc.at("thread_id").get<std::string>(), doc.at("agent_id").get<std::string>(),
                  doc.at("creator").get<std::string>(),
                  Millis{doc.at("created_ts").get<std::int64_t>()}};
}

Message message_from_json(const json& doc) {
    Message m;
    m.message_id = doc.at("message_id").get<std::string>();
    m.thread_id = doc.at("thread_id").get<std::string>();
    m.seq = doc.at("seq").get<std::uint64_t>();
    m.author = doc.at("author").get<std::string>();
    m.author_kind = doc.at("author_kind").get<std::string>();
    m.text = doc.at("text").get<std::string>();
    m.in_reply_to = doc.value("in_reply_to", "");
    m.ts = Millis{doc.at("ts").get<std::int64_t>()};
    return m;
}

} // namespace

json to_json(const Thread& t) {
    return json{{"thread_id", t.thread_id},
                {"agent_id", t.agent_id},
                {"creator", t.creator},
                {"created_ts", t.created_ts.count()}};
}

json to_json(const Message& m) {
    return json{{"message_id", m.message_id}, {"thread_id", m.thread_id},
                {"seq", m.seq},               {"author", m.author},
                {"author_kind", m.author_kind}, {"text", m.text},
                {"in_reply_to", m.in_reply_to}, {"ts", m.ts.count()}};
}

ThreadStore::ThreadStore(store::Store& store, const Clock& clock) : store_(store), clock_(clock) {}

Thread ThreadStore::create_thread(std::string_view thread_id, std::string_view agent_id,
                                  std::string_view creator) {
    Thread t;
    t.thread_id = thread_id.empty() ? crypto::random_id("th") : std::string(thread_id);
    if (!registry::valid_name(t.thread_id)) {
        fail(Errc::ValidationError, "invalid thread id '" + t.thread_id + "'");
    }
    t.agent_id = std::string(agent_id);
    t.creator = std::string(creator);
    t.created_ts = clock_.now();
    store_.put(thread_key(t.thread_id), to_json(t).dump(), 0);
    return t;
}

std::optional<Thread> ThreadStore::find_thread(std::string_view thread_id) const {
    auto rec = store_.get(thread_key(thread_id));
    if (!rec) {
        return std::nullopt;
    }
    return thread_from_json(json::parse(rec->value));
}

std::vector<Thread> ThreadStore::list_threads() const {
    std::vector<Thread> out;
    for (const auto& rec : store_.scan("thread/")) {
        out.push_back(thread_from_json(json::parse(rec.value)));
    }
    return out;
}

Message ThreadStore::append_message(std::string_view thread_id, std::string_view author,
                                    std::string_view author_kind, std::string_view text,
                                    std::string_view in_reply_to) {
    if (!find_thread(thread_id)) {
        fail(Errc::NotFound, "thread '" + std::string(thread_id) + "' not found");
    }
    // The counter key's store version is the message sequence number.
    std::uint64_t seq = 0;
    for (;;) {
        auto counter = store_.get(seq_key(thread_id));
        std::uint64_t have = counter ? counter->version : 0;
        try {
            seq = store_.put(seq_key(thread_id), "", have);
            break;
        } catch (const Error& e) {
            if (e.code() != Errc::VersionConflict) {
                throw;
            }
        }
    }
    Message m;
    m.thread_id = std::string(thread_id);
    m.seq = seq;
    m.message_id = "msg-" + m.thread_id + "-" + std::to_string(seq);
    m.author = std::string(author);
    m.author_kind = std::string(author_kind);
    m.text = std::string(text);
    m.in_reply_to = std::string(in_reply_to);
    m.ts = clock_.now();
    store_.put(message_key(thread_id, seq), to_json(m).dump());
    return m;
}

std::vector<Message> ThreadStore::messages(std::string_view thread_id, std::size_t limit) const {
    auto recs = store_.scan("msg/" + std::string(thread_id) + "/");
    std::size_t start = (limit == 0 || recs.size() <= limit) ? 0 : recs.size() - limit;
    std::vector<Message> out;
    for (std::size_t i = start; i < recs.size(); ++i) {
        out.push_back(message_from_json(json::parse(recs[i].value)));
    }
    return out;
}

} // namespace agynlite::threads
