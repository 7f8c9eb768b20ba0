#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "clockwork/profiles.hpp"
#include "clockwork/protocol.hpp"
#include "clockwork/runtime.hpp"

namespace clockwork {

// Multiplicative noise on emulated durations.
struct JitterSpec {
    enum class Kind { None, LogNormal };
    Kind kind = Kind::None;
    double sigma = 0.0;
    std::uint64_t seed = 1;

    static JitterSpec none() { return {}; }
    static JitterSpec lognormal(double sigma, std::uint64_t seed = 1) {
        return {Kind::LogNormal, sigma, seed};
    }

    // "none", "lognormal:<sigma>" or "lognormal:<sigma>:<seed>".
    static JitterSpec parse(const std::string& text);
    std::string str() const;
};

class Jitter {
public:
    // Throws std::invalid_argument for negative or non-finite sigma.
    explicit Jitter(const JitterSpec& spec, std::uint64_t stream = 0);

    // base * draw, at least 1ns. Exact when the spec is None.
    Duration apply(Duration base);
    double draw();

private:
    JitterSpec spec_;
    std::mt19937_64 rng_;
    std::lognormal_distribution<double> dist_;
};

// Device memory for weights, in fixed-size pages. A model is either fully
// resident or absent.
class PageCache {
public:
    explicit PageCache(std::uint32_t pages_total) : total_(pages_total), free_(pages_total) {}

    std::uint32_t pages_total() const { return total_; }
    std::uint32_t pages_free() const { return free_; }
    std::uint32_t pages_used() const { return total_ - free_; }
    bool holds(ModelId model) const { return held_.count(model) != 0; }
    std::size_t models_held() const { return held_.size(); }

    // False (and no change) when fewer than `pages` are free.
    bool acquire(ModelId model, std::uint32_t pages);
    // Pages returned; 0 when the model holds none.
    std::uint32_t release(ModelId model);

    void touch(ModelId model, TimePoint t) { lru_touch_[model] = t; }
    std::optional<TimePoint> last_touch(ModelId model) const;

private:
    std::uint32_t total_;
    std::uint32_t free_;
    std::unordered_map<ModelId, std::uint32_t> held_;
    std::unordered_map<ModelId, TimePoint> lru_touch_;
};

// Device memory for in-flight inputs and outputs.
class IOCacheGauge {
public:
    explicit IOCacheGauge(std::uint64_t capacity) : capacity_(capacity) {}

    std::uint64_t capacity() const { return capacity_; }
    std::uint64_t in_use() const { return in_use_; }
    bool try_acquire(std::uint64_t bytes);
    void release(std::uint64_t bytes);

private:
    std::uint64_t capacity_;
    std::uint64_t in_use_ = 0;
};

struct WorkerConfig {
    std::uint32_t worker_id = 0;
    unsigned gpu_count = 1;
    std::uint32_t pages_per_gpu = 500;
    std::uint64_t iocache_bytes = 512ull * 1024 * 1024;
    std::uint64_t workspace_bytes = 512ull * 1024 * 1024;  // fixed reservation
    JitterSpec jitter;
    bool keep_result_log = false;
};

// Emulated predictable worker. Each GPU has a Load executor (Load and
// Unload) and an Infer executor; each runs one action at a time, in order of
// `earliest`, and only starts an action inside its [earliest, latest] window.
// Executing means waiting the profiled duration on the runtime clock.
class Worker {
public:
    using ResultSink = std::function<void(const ActionResult&)>;

    Worker(Runtime& runtime, std::shared_ptr<const ModelCatalog> catalog, WorkerConfig config,
           ResultSink sink);

    Worker(const Worker&) = delete;
    Worker& operator=(const Worker&) = delete;

    WorkerHandshake handshake() const;

    // Queues the action on its executor (Infer starts its Input stage
    // immediately). Invalid actions produce a MalformedAction result
    // synchronously.
    void on_action(const Action& action);

    const WorkerConfig& config() const { return config_; }
    const PageCache& page_cache(unsigned gpu) const { return gpus_.at(gpu).pages; }
    const IOCacheGauge& iocache(unsigned gpu) const { return gpus_.at(gpu).io; }
    bool resident(unsigned gpu, ModelId model) const;

    // Total time the Infer executor of `gpu` spent executing.
    Duration infer_busy(unsigned gpu) const { return gpus_.at(gpu).infer_busy; }
    Duration load_busy(unsigned gpu) const { return gpus_.at(gpu).load_busy; }

    std::size_t pending_actions() const;
    const std::vector<ActionResult>& result_log() const { return result_log_; }

private:
    struct Pending {
        Action action;
        std::uint64_t io_bytes = 0;
        bool io_reserved = false;
        TimePoint input_ready = kNever;
        bool done = false;
    };
    using PendingPtr = std::shared_ptr<Pending>;

    struct ByEarliest {
        bool operator()(const PendingPtr& a, const PendingPtr& b) const {
            if (a->action.earliest != b->action.earliest) {
                return a->action.earliest < b->action.earliest;
            }
            return a->action.id < b->action.id;
        }
    };

    struct Executor {
        std::set<PendingPtr, ByEarliest> pending;
        bool busy = false;
        TimePoint busy_until = 0;
        TimePoint next_wake = kNever;
    };

    struct Gpu {
        Gpu(std::uint32_t pages, std::uint64_t io_bytes) : pages(pages), io(io_bytes) {}
        PageCache pages;
        IOCacheGauge io;
        std::unordered_map<ModelId, bool> loading;  // pages held, copy in progress
        Executor load_exec;
        Executor infer_exec;
        std::optional<ModelId> executing;  // model currently in Exec
        TimePoint input_free_at = 0;
        TimePoint output_free_at = 0;
        std::deque<PendingPtr> io_waiting;
        Duration infer_busy = 0;
        Duration load_busy = 0;
    };

    void emit(const ActionResult& result);
    void reject(const Action& action, ActionStatus status);
    void start_input(Gpu& gpu, const PendingPtr& p);
    void release_io(unsigned gpu_index, const PendingPtr& p);
    void admit_io_waiters(unsigned gpu_index);
    void wake(unsigned gpu_index, bool load_exec, TimePoint t);
    void pump_load(unsigned gpu_index);
    void pump_infer(unsigned gpu_index);
    void run_load(unsigned gpu_index, const Action& action);
    void run_unload(unsigned gpu_index, const Action& action);
    void run_infer(unsigned gpu_index, const PendingPtr& p);

    Runtime& runtime_;
    std::shared_ptr<const ModelCatalog> catalog_;
    WorkerConfig config_;
    ResultSink sink_;
    Jitter jitter_;
    std::vector<Gpu> gpus_;
    std::vector<ActionResult> result_log_;
};

}  // namespace clockwork
