#pragma once

#include <random>

#include "clockwork/protocol.hpp"

namespace clockwork::testing {

// Random valid messages for round-trip fuzzing.
class MessageGenerator {
public:
    explicit MessageGenerator(std::uint64_t seed) : rng_(seed) {}

    Message next() {
        switch (pick(0, 4)) {
            case 0: return handshake();
            case 1: return action();
            case 2: return result();
            case 3: return request();
            default: return response();
        }
    }

    WorkerHandshake handshake() {
        WorkerHandshake h;
        h.worker_id = u32();
        h.gpu_count = static_cast<std::uint32_t>(pick(0, 8));
        for (std::uint32_t g = 0; g < h.gpu_count; g++) h.pages_total.push_back(u32() | 1);
        auto n = pick(0, 50);
        for (int i = 0; i < n; i++) h.models_resident.push_back(u32());
        return h;
    }

    Action action() {
        Action a;
        a.id = rng_();
        a.kind = static_cast<ActionKind>(pick(1, 3));
        a.model_id = u32();
        a.gpu = static_cast<std::uint16_t>(pick(0, 65535));
        a.earliest = i64();
        a.latest = a.earliest + pick(0, 1 << 30);
        if (a.kind != ActionKind::Unload) a.expected_duration = i64();
        if (a.kind == ActionKind::Infer) {
            static constexpr std::uint16_t sizes[] = {1, 2, 4, 8, 16, 3, 100};
            a.batch_size = sizes[pick(0, 6)];
            for (unsigned i = 0; i < a.batch_size; i++) a.batch.push_back(rng_());
            auto m = pick(0, 3) == 0 ? pick(0, 64) : 0;
            for (int i = 0; i < m; i++) a.input.push_back(static_cast<std::uint8_t>(rng_()));
        }
        return a;
    }

    ActionResult result() {
        ActionResult r;
        r.action_id = rng_();
        r.status = static_cast<ActionStatus>(pick(0, 4));
        r.start = i64();
        r.end = r.start + pick(0, 1 << 30);
        r.device_duration = r.status == ActionStatus::Success ? pick(0, 1 << 30) : 0;
        return r;
    }

    InferenceRequest request() {
        return InferenceRequest{rng_(), u32(), pick(1, 1 << 30), i64(), u32()};
    }

    InferenceResponse response() {
        return InferenceResponse{rng_(), static_cast<ResponseStatus>(pick(0, 2)), i64(),
                                 pick(0, 1) == 1};
    }

    std::mt19937_64& rng() { return rng_; }

private:
    std::int64_t pick(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng_);
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(rng_()); }
    std::int64_t i64() { return pick(-(std::int64_t{1} << 61), std::int64_t{1} << 61); }

    std::mt19937_64 rng_;
};

}  // namespace clockwork::testing
