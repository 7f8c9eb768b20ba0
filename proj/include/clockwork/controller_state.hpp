#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clockwork/profiles.hpp"
#include "clockwork/protocol.hpp"
#include "clockwork/time.hpp"

namespace clockwork {

// Nearest-rank percentile (pct in (0, 100]) of `values`; 0 when empty.
Duration nearest_rank_percentile(std::vector<Duration> values, double pct);

// Rolling window of measured durations. The prediction is the nearest-rank
// 99th percentile of the window, or the seed while no measurement exists.
class DurationEstimator {
public:
    static constexpr unsigned kDefaultWindow = 20;

    explicit DurationEstimator(Duration seed = 0, unsigned window = kDefaultWindow);

    Duration predict() const { return cached_; }
    void record(Duration measured);

    Duration seed() const { return seed_; }
    unsigned window() const { return window_; }
    std::size_t size() const { return samples_.size(); }

private:
    void refresh();

    Duration seed_;
    unsigned window_;
    std::vector<Duration> samples_;  // ring once full
    std::size_t next_ = 0;
    Duration cached_;
};

// Estimators for one worker: Infer per (model, batch size), Load per model.
// Storage for a key is only allocated once it is first measured.
class WorkerEstimators {
public:
    WorkerEstimators(std::shared_ptr<const ModelCatalog> catalog, unsigned window);

    // Throws std::out_of_range for unknown models or batch sizes.
    Duration predict_infer(ModelId model, unsigned batch_size) const;
    Duration predict_load(ModelId model) const;

    void record_infer(ModelId model, unsigned batch_size, Duration measured);
    void record_load(ModelId model, Duration measured);

    unsigned window() const { return window_; }

private:
    std::uint64_t infer_key(ModelId model, unsigned batch_size) const;

    std::shared_ptr<const ModelCatalog> catalog_;
    unsigned window_;
    std::unordered_map<std::uint64_t, DurationEstimator> infer_;
    std::unordered_map<ModelId, DurationEstimator> load_;
};

// Predicted occupancy of one executor (Load or Infer) on one GPU.
class ExecutorTimeline {
public:
    struct Entry {
        ActionId id;
        TimePoint earliest;
        Duration duration;
        TimePoint start;
        TimePoint end;
    };

    // Appends an action predicted to run [start, start + duration).
    void add(ActionId id, TimePoint earliest, TimePoint start, Duration duration);

    // Removes the entry; later entries are re-chained from `anchor` (the
    // time the executor became free according to the result). False when
    // the id is unknown.
    bool complete(ActionId id, TimePoint anchor);

    TimePoint free_at(TimePoint now) const;
    Duration outstanding(TimePoint now) const { return free_at(now) - now; }

    const std::deque<Entry>& entries() const { return entries_; }
    std::optional<Entry> find(ActionId id) const;

private:
    std::deque<Entry> entries_;
};

struct Prediction {
    TimePoint start;
    TimePoint end;
    bool operator==(const Prediction&) const = default;
};

// start = max(earliest_allowed, free_at), end = start + duration.
Prediction predict_completion(const ExecutorTimeline& timeline, TimePoint now, Duration duration,
                              TimePoint earliest_allowed);

struct SlackConfig {
    Duration lead = millis(1);
    Duration tardy = millis(1);
};

struct Window {
    TimePoint earliest;
    TimePoint latest;
    bool operator==(const Window&) const = default;
};

Window window_for(TimePoint predicted_start, TimePoint now, const SlackConfig& slack);

// Controller view of one GPU's PageCache. A model counts as resident from
// the moment its Load is scheduled, effective at the Load's predicted end.
class MemoryMirror {
public:
    struct Residency {
        std::uint32_t pages = 0;
        TimePoint effective = 0;
        bool confirmed = false;  // Load result seen
        ActionId load_action = 0;
        TimePoint last_use = 0;
        TimePoint loaded_at = 0;
    };

    explicit MemoryMirror(std::uint32_t pages_total = 0)
        : pages_total_(pages_total), pages_free_(pages_total) {}

    std::uint32_t pages_total() const { return pages_total_; }
    std::uint32_t pages_free() const { return pages_free_; }

    bool placed(ModelId model) const { return models_.count(model) != 0; }
    const Residency* residency(ModelId model) const;
    std::size_t model_count() const { return models_.size(); }

    // Debits pages; false (no change) when they do not fit or the model is
    // already placed.
    bool begin_load(ModelId model, std::uint32_t pages, ActionId action, TimePoint effective,
                    TimePoint now);
    void load_succeeded(ModelId model, ActionId action, TimePoint actual_end);
    // Rolls back a Load the worker refused. Ignored if the placement belongs
    // to a different Load.
    void load_failed(ModelId model, ActionId action);
    // Credits pages immediately; returns pages freed.
    std::uint32_t unload(ModelId model);

    void touch(ModelId model, TimePoint t);

    // Placed models, least recently used first.
    std::vector<ModelId> lru_order() const;
    template <typename Fn>
    void for_each_lru(Fn&& fn) const {
        for (auto& [t, m] : lru_) {
            if (!fn(m)) return;
        }
    }

private:
    std::uint32_t pages_total_;
    std::uint32_t pages_free_;
    std::unordered_map<ModelId, Residency> models_;
    std::set<std::pair<TimePoint, ModelId>> lru_;
};

}  // namespace clockwork
