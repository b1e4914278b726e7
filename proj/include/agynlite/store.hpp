#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace agynlite::store {

struct Record {
    std::string key;
    std::string value;
    std::uint64_t version = 0;

    friend bool operator==(const Record&, const Record&) = default;
};

struct Options {
    // Appends between automatic snapshots; 0 disables auto-snapshotting.
    std::size_t snapshot_every = 10'000;
    // fdatasync after every append. Off by default; flush-to-OS is enough
    // for process crashes.
    bool sync_writes = false;
};

// Durable key-value store with per-key compare-and-set.
//
// On disk: `store.log` is an append-only sequence of frames, each a 4-byte
// big-endian length followed by key-length/key/value-length/value/version
// (lengths u32 BE, version u64 BE). A frame with version 0 is a deletion.
// `store.snap` holds the same frames for every live record at snapshot time.
// Recovery loads the snapshot, then replays the log; a torn tail frame is
// dropped.
//
// All methods are safe to call concurrently.
class Store {
public:
    // Memory-only store.
    Store();
    explicit Store(std::filesystem::path dir, Options options = {});
    ~Store();

    Store(const Store&) = delete;
    Store& operator=(const Store&) = delete;

    // expected_version: nullopt for an unconditional write, 0 for "must not
    // exist". Returns the new version.
    std::uint64_t put(std::string_view key, std::string_view value,
                      std::optional<std::uint64_t> expected_version = std::nullopt);

    std::optional<Record> get(std::string_view key) const;

    // Live records whose key starts with prefix, ascending by key.
    std::vector<Record> scan(std::string_view prefix) const;

    void remove(std::string_view key, std::uint64_t expected_version);

    // Writes a full snapshot and truncates the log.
    void snapshot();

    bool persistent() const { return !dir_.empty(); }
    const std::filesystem::path& dir() const { return dir_; }

private:
    struct Entry {
        std::string value;
        std::uint64_t version = 0;
    };

    void recover();
    void append_locked(std::string_view key, std::string_view value, std::uint64_t version);
    void maybe_snapshot_locked();
    void snapshot_locked();

    mutable std::mutex mutex_;
    // Deleted keys are forgotten entirely; a re-created key starts at 1.
    std::map<std::string, Entry, std::less<>> records_;
    std::filesystem::path dir_;
    Options options_;
    std::FILE* log_ = nullptr;
    std::size_t appends_since_snapshot_ = 0;
};

} // namespace agynlite::store
