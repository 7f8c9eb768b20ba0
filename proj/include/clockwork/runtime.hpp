#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

#include "clockwork/time.hpp"

namespace clockwork {

// Time source plus timer queue. Worker and controller logic is written
// against this interface and is only ever invoked on the runtime's thread.
class Runtime {
public:
    using Task = std::function<void()>;

    virtual ~Runtime() = default;
    virtual TimePoint now() const = 0;

    // Runs `task` once now() >= t. Tasks with equal times run in submission
    // order.
    virtual void at(TimePoint t, Task task) = 0;

    void after(Duration d, Task task) { at(now() + d, std::move(task)); }
};

namespace detail {

struct TimedTask {
    TimePoint time;
    std::uint64_t seq;
    Runtime::Task task;
};

struct LaterFirst {
    bool operator()(const TimedTask& a, const TimedTask& b) const {
        return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
};

using TaskHeap = std::priority_queue<detail::TimedTask, std::vector<detail::TimedTask>, LaterFirst>;

}  // namespace detail

// Discrete-event loop: time only advances when the next task runs.
class SimRuntime final : public Runtime {
public:
    TimePoint now() const override { return now_; }
    void at(TimePoint t, Task task) override;

    // Runs tasks scheduled at or before `end`, then sets now() to `end`.
    void run_until(TimePoint end);

    // Runs until no tasks remain.
    void run();

    bool step();
    std::size_t pending() const { return heap_.size(); }
    std::uint64_t executed() const { return executed_; }

private:
    TimePoint now_ = 0;
    std::uint64_t seq_ = 0;
    std::uint64_t executed_ = 0;
    detail::TaskHeap heap_;
};

enum class ClockSource { Monotonic, Realtime };

// Wall-clock loop. at()/post() are thread-safe; tasks run on the thread that
// calls run() (or the one spawned by start()).
class RealtimeRuntime final : public Runtime {
public:
    explicit RealtimeRuntime(ClockSource source = ClockSource::Monotonic,
                             Duration spin_guard = micros(100));
    ~RealtimeRuntime() override;

    RealtimeRuntime(const RealtimeRuntime&) = delete;
    RealtimeRuntime& operator=(const RealtimeRuntime&) = delete;

    TimePoint now() const override;
    void at(TimePoint t, Task task) override;
    void post(Task task) { at(now(), std::move(task)); }

    // Blocks until stop() is called.
    void run();
    void start();
    void stop();

    static TimePoint clock_now(ClockSource source);

private:
    ClockSource source_;
    Duration spin_guard_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    detail::TaskHeap heap_;
    std::uint64_t seq_ = 0;
    bool stopping_ = false;
    std::thread thread_;
};

}  // namespace clockwork
