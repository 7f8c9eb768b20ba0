#pragma once

#include <cstdint>
#include <limits>

namespace clockwork {

// Nanoseconds since the experiment epoch. The epoch is 0 in simulated mode
// and an agreed wall-clock origin in distributed mode.
using TimePoint = std::int64_t;

// Signed nanoseconds.
using Duration = std::int64_t;

using ModelId = std::uint32_t;
using ActionId = std::uint64_t;
using RequestId = std::uint64_t;

constexpr TimePoint kNever = std::numeric_limits<TimePoint>::max();

constexpr Duration nanos(std::int64_t n) { return n; }
constexpr Duration micros(std::int64_t n) { return n * 1000; }
constexpr Duration millis(std::int64_t n) { return n * 1000000; }
constexpr Duration seconds(std::int64_t n) { return n * 1000000000; }

// Fractional milliseconds, rounded to the nearest nanosecond.
constexpr Duration millis_f(double ms) {
    double ns = ms * 1e6;
    return static_cast<Duration>(ns < 0 ? ns - 0.5 : ns + 0.5);
}

constexpr double to_millis(Duration d) { return static_cast<double>(d) / 1e6; }
constexpr double to_seconds(Duration d) { return static_cast<double>(d) / 1e9; }

}  // namespace clockwork
