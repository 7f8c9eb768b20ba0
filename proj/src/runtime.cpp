#include "clockwork/runtime.hpp"

#include <chrono>

namespace clockwork {

void SimRuntime::at(TimePoint t, Task task) {
    if (t < now_) t = now_;
    heap_.push(detail::TimedTask{t, seq_++, std::move(task)});
}

bool SimRuntime::step() {
    if (heap_.empty()) return false;
    // priority_queue::top is const; the task is moved out before pop.
    auto& top = const_cast<detail::TimedTask&>(heap_.top());
    now_ = top.time;
    Task task = std::move(top.task);
    heap_.pop();
    executed_++;
    task();
    return true;
}

void SimRuntime::run_until(TimePoint end) {
    while (!heap_.empty() && heap_.top().time <= end) step();
    if (end > now_) now_ = end;
}

void SimRuntime::run() {
    while (step()) {
    }
}

RealtimeRuntime::RealtimeRuntime(ClockSource source, Duration spin_guard)
    : source_(source), spin_guard_(spin_guard) {}

RealtimeRuntime::~RealtimeRuntime() {
    stop();
}

TimePoint RealtimeRuntime::clock_now(ClockSource source) {
    using namespace std::chrono;
    if (source == ClockSource::Realtime) {
        return duration_cast<nanoseconds>(system_clock::now().time_since_epoch()).count();
    }
    return duration_cast<nanoseconds>(steady_clock::now().time_since_epoch()).count();
}

TimePoint RealtimeRuntime::now() const {
    return clock_now(source_);
}

void RealtimeRuntime::at(TimePoint t, Task task) {
    {
        std::lock_guard<std::mutex> lock(mutex_);
        heap_.push(detail::TimedTask{t, seq_++, std::move(task)});
    }
    cv_.notify_one();
}

void RealtimeRuntime::run() {
    std::unique_lock<std::mutex> lock(mutex_);
    while (!stopping_) {
        if (heap_.empty()) {
            cv_.wait(lock);
            continue;
        }
        TimePoint due = heap_.top().time;
        TimePoint t = now();
        if (due > t + spin_guard_) {
            // Wake early and spin the remainder; OS sleep overshoot would
            // otherwise show up as emulated execution time.
            auto wait = std::chrono::nanoseconds(due - t - spin_guard_);
            cv_.wait_for(lock, wait);
            continue;
        }
        if (due > t) {
            lock.unlock();
            while (now() < due) std::this_thread::yield();
            lock.lock();
            continue;
        }
        auto& top = const_cast<detail::TimedTask&>(heap_.top());
        Task task = std::move(top.task);
        heap_.pop();
        lock.unlock();
        task();
        lock.lock();
    }
}

void RealtimeRuntime::start() {
    thread_ = std::thread([this] { run(); });
}

void RealtimeRuntime::stop() {
    {
        std::lock_guard<std::mutex> lock(mutex_);
        stopping_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable() && thread_.get_id() != std::this_thread::get_id()) thread_.join();
}

}  // namespace clockwork
