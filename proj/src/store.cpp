#include "agynlite/store.hpp"

#include <cerrno>
#include <cstring>
#include <fstream>

#include <unistd.h>

#include "agynlite/error.hpp"

namespace agynlite::store {

namespace {

constexpr const char* kLogName = "store.log";
constexpr const char* kSnapName = "store.snap";

void put_u32(std::string& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) {
        out.push_back(static_cast<char>((v >> shift) & 0xff));
    }
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8) {
        out.push_back(static_cast<char>((v >> shift) & 0xff));
    }
}

std::uint64_t get_be(const std::string& in, std::size_t pos, int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
        v = (v << 8) | static_cast<unsigned char>(in[pos + i]);
    }
    return v;
}

std::string encode_frame(std::string_view key, std::string_view value, std::uint64_t version) {
    std::string body;
    body.reserve(16 + key.size() + value.size());
    put_u32(body, static_cast<std::uint32_t>(key.size()));
    body.append(key);
    put_u32(body, static_cast<std::uint32_t>(value.size()));
    body.append(value);
    put_u64(body, version);

    std::string frame;
    frame.reserve(4 + body.size());
    put_u32(frame, static_cast<std::uint32_t>(body.size()));
    frame.append(body);
    return frame;
}

struct Frame {
    std::string key;
    std::string value;
    std::uint64_t version = 0;
};

// Decodes consecutive frames; stops at the first incomplete or malformed one
// and reports how many bytes were consumed cleanly.
std::vector<Frame> decode_frames(const std::string& data, std::size_t& consumed) {
    std::vector<Frame> frames;
    std::size_t pos = 0;
    while (pos + 4 <= data.size()) {
        auto len = get_be(data, pos, 4);
        if (pos + 4 + len > data.size() || len < 16) {
            break;
        }
        std::size_t p = pos + 4;
        std::size_t end = p + len;
        auto klen = get_be(data, p, 4);
        p += 4;
        if (p + klen + 4 > end) {
            break;
        }
        Frame f;
        f.key = data.substr(p, klen);
        p += klen;
        auto vlen = get_be(data, p, 4);
        p += 4;
        if (p + vlen + 8 != end) {
            break;
        }
        f.value = data.substr(p, vlen);
        p += vlen;
        f.version = get_be(data, p, 8);
        frames.push_back(std::move(f));
        pos = end;
    }
    consumed = pos;
    return frames;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return {};
    }
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

[[noreturn]] void io_fail(const std::string& what) {
    fail(Errc::StorageFailure, what + ": " + std::strerror(errno));
}

} // namespace

Store::Store() = default;

Store::Store(std::filesystem::path dir, Options options)
    : dir_(std::move(dir)), options_(options) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) {
        fail(Errc::StorageFailure, "cannot create store directory " + dir_.string());
    }
    recover();
}

Store::~Store() {
    if (log_ != nullptr) {
        std::fclose(log_);
    }
}

void Store::recover() {
    std::size_t consumed = 0;
    for (auto& f : decode_frames(read_file(dir_ / kSnapName), consumed)) {
        records_[f.key] = Entry{std::move(f.value), f.version};
    }

    auto log_path = dir_ / kLogName;
    auto log_data = read_file(log_path);
    for (auto& f : decode_frames(log_data, consumed)) {
        if (f.version == 0) {
            records_.erase(f.key);
        } else {
            records_[f.key] = Entry{std::move(f.value), f.version};
        }
    }
    if (consumed != log_data.size()) {
        std::filesystem::resize_file(log_path, consumed);
    }

    log_ = std::fopen(log_path.c_str(), "ab");
    if (log_ == nullptr) {
        io_fail("cannot open " + log_path.string());
    }
}

void Store::append_locked(std::string_view key, std::string_view value, std::uint64_t version) {
    if (log_ == nullptr) {
        return;
    }
    auto frame = encode_frame(key, value, version);
    if (std::fwrite(frame.data(), 1, frame.size(), log_) != frame.size() ||
        std::fflush(log_) != 0) {
        io_fail("append to store log failed");
    }
    if (options_.sync_writes && ::fdatasync(fileno(log_)) != 0) {
        io_fail("fdatasync failed");
    }
    ++appends_since_snapshot_;
}

void Store::maybe_snapshot_locked() {
    // Only after the in-memory map reflects the append, or the snapshot
    // would miss it while the log that held it gets truncated.
    if (options_.snapshot_every != 0 && appends_since_snapshot_ >= options_.snapshot_every) {
        snapshot_locked();
    }
}

std::uint64_t Store::put(std::string_view key, std::string_view value,
                         std::optional<std::uint64_t> expected_version) {
    std::lock_guard lock(mutex_);
    auto it = records_.find(key);
    std::uint64_t current = it == records_.end() ? 0 : it->second.version;
    if (expected_version && *expected_version != current) {
        fail(Errc::VersionConflict, "version conflict on '" + std::string(key) + "': expected " +
                                        std::to_string(*expected_version) + ", have " +
                                        std::to_string(current));
    }
    std::uint64_t next = current + 1;
    append_locked(key, value, next);
    if (it == records_.end()) {
        records_.emplace(std::string(key), Entry{std::string(value), next});
    } else {
        it->second = Entry{std::string(value), next};
    }
    maybe_snapshot_locked();
    return next;
}

std::optional<Record> Store::get(std::string_view key) const {
    std::lock_guard lock(mutex_);
    auto it = records_.find(key);
    if (it == records_.end()) {
        return std::nullopt;
    }
    return Record{it->first, it->second.value, it->second.version};
}

std::vector<Record> Store::scan(std::string_view prefix) const {
    std::lock_guard lock(mutex_);
    std::vector<Record> out;
    for (auto it = records_.lower_bound(prefix); it != records_.end(); ++it) {
        if (it->first.compare(0, prefix.size(), prefix) != 0) {
            break;
        }
        out.push_back(Record{it->first, it->second.value, it->second.version});
    }
    return out;
}

void Store::remove(std::string_view key, std::uint64_t expected_version) {
    std::lock_guard lock(mutex_);
    auto it = records_.find(key);
    if (it == records_.end()) {
        fail(Errc::NotFound, "no such key '" + std::string(key) + "'");
    }
    if (it->second.version != expected_version) {
        fail(Errc::VersionConflict, "version conflict deleting '" + std::string(key) + "'");
    }
    append_locked(key, {}, 0);
    records_.erase(it);
    maybe_snapshot_locked();
}

void Store::snapshot() {
    std::lock_guard lock(mutex_);
    snapshot_locked();
}

void Store::snapshot_locked() {
    appends_since_snapshot_ = 0;
    if (dir_.empty()) {
        return;
    }
    auto tmp = dir_ / "store.snap.tmp";
    {
        std::FILE* out = std::fopen(tmp.c_str(), "wb");
        if (out == nullptr) {
            io_fail("cannot write snapshot");
        }
        for (const auto& [key, entry] : records_) {
            auto frame = encode_frame(key, entry.value, entry.version);
            if (std::fwrite(frame.data(), 1, frame.size(), out) != frame.size()) {
                std::fclose(out);
                io_fail("snapshot write failed");
            }
        }
        if (std::fflush(out) != 0 || ::fsync(fileno(out)) != 0) {
            std::fclose(out);
            io_fail("snapshot flush failed");
        }
        std::fclose(out);
    }
    std::filesystem::rename(tmp, dir_ / kSnapName);

    std::fclose(log_);
    log_ = std::fopen((dir_ / kLogName).c_str(), "wb");
    if (log_ == nullptr) {
        io_fail("cannot reopen store log");
    }
}

} // namespace agynlite::store
