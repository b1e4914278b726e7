#pragma once

#include <atomic>
#include <chrono>

namespace agynlite {

// Monotonic milliseconds. Every timestamp in the platform is one of these.
using Millis = std::chrono::milliseconds;

class Clock {
public:
    virtual ~Clock() = default;
    virtual Millis now() const = 0;
};

class SteadyClock final : public Clock {
public:
    Millis now() const override {
        return std::chrono::duration_cast<Millis>(
            std::chrono::steady_clock::now().time_since_epoch());
    }
};

// Virtual time for tests; only moves when told to.
class ManualClock final : public Clock {
public:
    explicit ManualClock(Millis start = Millis{0}) : now_(start.count()) {}

    Millis now() const override { return Millis{now_.load()}; }
    void set(Millis t) { now_.store(t.count()); }
    void advance(Millis d) { now_.fetch_add(d.count()); }

private:
    std::atomic<Millis::rep> now_;
};

} // namespace agynlite
