#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "clockwork/controller_state.hpp"
#include "clockwork/profiles.hpp"
#include "clockwork/protocol.hpp"
#include "clockwork/runtime.hpp"

namespace clockwork {

struct SchedulerConfig {
    Duration work_horizon = millis(5);
    Duration capacity_horizon = millis(100);
    SlackConfig slack;
    unsigned estimator_window = DurationEstimator::kDefaultWindow;
    Duration default_slo = millis(100);
    // Idle-GPU guard for the inverse-load allocation weights.
    double load_epsilon_ns = 1000.0;
};

// Extra per-request context delivered alongside each response.
struct RequestOutcome {
    InferenceResponse response;
    ModelId model_id = 0;
    TimePoint arrival = 0;
    Duration slo = 0;
    unsigned batch_size = 0;  // 0 unless served
};

// What the controller predicted for an action, and what happened.
struct ActionOutcome {
    ActionId id = 0;
    ActionKind kind = ActionKind::Infer;
    unsigned worker = 0;
    unsigned gpu = 0;
    ModelId model_id = 0;
    unsigned batch_size = 0;
    Duration predicted_duration = 0;
    TimePoint predicted_start = 0;
    TimePoint predicted_end = 0;
    TimePoint earliest = 0;
    TimePoint latest = 0;
    ActionResult result;
};

// Demand bookkeeping for Load selection, exposed for inspection.
struct ModelLoadStats {
    double demand = 0;  // d_m, ns
    double priority = 0;
    std::vector<std::pair<unsigned, double>> allocation;  // (gpu, a_{m,g})
};

// Splits `demand` across the GPUs holding a model in inverse proportion to
// each GPU's load excluding that model; loads below `epsilon` count as
// `epsilon`. The shares sum to `demand`.
std::vector<double> allocate_demand(double demand, const std::vector<double>& other_load,
                                    double epsilon);

// Load priority: demand minus the work the model's GPUs can absorb within
// `capacity`. `gpu_load` includes the model's own allocation. With no
// placements this is the demand itself.
double load_priority(double demand, const std::vector<double>& alloc,
                     const std::vector<double>& gpu_load, double capacity, double epsilon);

// Centralized proactive scheduler. All methods must be called on the
// runtime's thread; outbound actions and responses go through the sinks.
class Scheduler {
public:
    using ActionSink = std::function<void(unsigned worker, const Action&)>;
    using ResponseSink = std::function<void(const RequestOutcome&)>;
    using ActionLogSink = std::function<void(const ActionOutcome&)>;

    Scheduler(Runtime& runtime, std::shared_ptr<const ModelCatalog> catalog,
              SchedulerConfig config, ActionSink actions, ResponseSink responses);
    ~Scheduler();

    Scheduler(const Scheduler&) = delete;
    Scheduler& operator=(const Scheduler&) = delete;

    // Registers a worker; GPUs are numbered globally in registration order.
    // Returns the worker index.
    unsigned add_worker(const WorkerHandshake& handshake);

    // Stamps the arrival time and either queues or denies the request.
    // Throws std::invalid_argument for unknown models or non-positive SLOs.
    void on_request(InferenceRequest request);

    void on_result(unsigned worker, const ActionResult& result);

    void set_action_log(ActionLogSink sink) { action_log_ = std::move(sink); }

    // Introspection.
    const SchedulerConfig& config() const { return config_; }
    unsigned gpu_count() const { return static_cast<unsigned>(gpus_.size()); }
    unsigned worker_count() const { return static_cast<unsigned>(workers_.size()); }
    const MemoryMirror& memory(unsigned gpu) const;
    const ExecutorTimeline& infer_timeline(unsigned gpu) const;
    const ExecutorTimeline& load_timeline(unsigned gpu) const;
    Duration predict_infer(unsigned gpu, ModelId model, unsigned batch_size) const;
    ModelLoadStats load_stats(ModelId model) const;
    double gpu_load(unsigned gpu) const;
    std::size_t queued_requests(ModelId model) const;
    std::size_t outstanding_actions() const { return outstanding_.size(); }
    std::size_t live_requests() const { return live_requests_; }

    // Deadline used for scheduling: arrival + slo minus the output margin.
    Duration output_margin(ModelId model) const;

private:
    using Handle = std::uint32_t;

    struct Request {
        InferenceRequest req;
        TimePoint deadline = 0;
        bool live = false;
        bool taken = false;
        bool in_demand = false;
        bool cold = false;
        std::uint8_t purged = 0;  // bit per batch index
        double demand = 0;        // contribution to d_m
        TimePoint benefit_until = 0;
        std::uint32_t gen = 0;
    };

    struct Slot {
        Handle handle;
        std::uint32_t gen;
    };

    struct BatchQueue {
        std::deque<Slot> order;  // by deadline, then arrival
        std::uint32_t live = 0;    // queued, not taken, not purged
        std::uint64_t stamp = 0;
    };

    struct ModelState {
        std::vector<BatchQueue> queues;  // one per profiled batch size
        std::deque<Slot> demand_order;  // by benefit_until
        double demand = 0;
        double priority = 0;
        std::vector<std::pair<unsigned, double>> alloc;  // placed GPUs
        TimePoint last_loaded = -1;
        TimePoint next_check = kNever;
        std::uint32_t demand_count = 0;
        std::unordered_map<unsigned, std::uint32_t> infers_on;  // gpu -> count
        std::uint32_t queued = 0;
    };

    struct StrategyEntry {
        TimePoint latest;
        unsigned batch_size;
        ModelId model;
        std::uint8_t batch_index;
        std::uint64_t stamp;
    };
    struct StrategyOrder {
        bool operator()(const StrategyEntry& a, const StrategyEntry& b) const {
            if (a.latest != b.latest) return a.latest > b.latest;
            if (a.batch_size != b.batch_size) return a.batch_size < b.batch_size;
            return a.model > b.model;
        }
    };

    struct GpuState {
        unsigned worker = 0;
        unsigned local = 0;
        MemoryMirror memory;
        ExecutorTimeline infer;
        ExecutorTimeline load;
        std::priority_queue<StrategyEntry, std::vector<StrategyEntry>, StrategyOrder> strategies;
        double load_sum = 0;  // l_g
        TimePoint infer_wake = kNever;
        TimePoint load_wake = kNever;
    };

    struct WorkerState {
        std::vector<unsigned> gpus;  // global indices
        std::unique_ptr<WorkerEstimators> estimators;
    };

    struct Outstanding {
        ActionOutcome record;
        std::vector<Handle> batch;
    };

    // Requests
    Handle allocate(Request r);
    void release(Handle h);
    void respond(Handle h, ResponseStatus status, unsigned batch_size, TimePoint now);
    bool admissible(const Request& r, TimePoint now) const;
    void enqueue(Handle h, TimePoint now);

    // Queues and strategies
    void purge(ModelId m, std::size_t bi, TimePoint now);
    void purge_all(ModelId m, TimePoint now);
    void refresh_strategy(ModelId m, std::size_t bi, TimePoint now);
    void push_strategy(unsigned gpu, ModelId m, std::size_t bi, TimePoint now);
    void push_all_strategies(unsigned gpu, ModelId m, TimePoint now);
    TimePoint strategy_latest(ModelId m, std::size_t bi, unsigned gpu) const;
    std::optional<Handle> head(ModelId m, std::size_t bi) const;
    void take(ModelId m, Handle h);
    void schedule_check(ModelId m, TimePoint t);
    void run_check(ModelId m);

    // Load stats
    void demand_add(ModelId m, Handle h, TimePoint now);
    void demand_remove(ModelId m, Handle h);
    void expire_demand(ModelId m, TimePoint now);
    void update_allocation(ModelId m);
    void set_priority(ModelId m, double p);

    // Dispatch
    void fill(unsigned gpu);
    void fill_infer(unsigned gpu);
    void fill_load(unsigned gpu);
    void fill_loads_for(ModelId m);
    bool dispatch_infer(unsigned gpu, ModelId m, std::size_t bi, TimePoint now);
    bool dispatch_load(unsigned gpu, ModelId m, TimePoint now);
    void send(unsigned gpu, Action action, const ActionOutcome& record, std::vector<Handle> batch);
    void wake(unsigned gpu, bool load, TimePoint t);

    Duration predict(unsigned gpu, ModelId m, unsigned batch_size) const;
    Duration predict_load_on(unsigned gpu, ModelId m) const;
    TimePoint residency_effective(unsigned gpu, ModelId m) const;
    const std::vector<unsigned>& placements(ModelId m) const { return placed_on_[m]; }
    // Smallest prediction across the GPUs holding the model (seed if none).
    Duration purge_estimate(ModelId m, unsigned batch_size) const;
    Duration input_time(ModelId m, unsigned batch_size) const;
    bool dead(const Slot& s, std::size_t bi) const;

    void handle_infer_result(Outstanding& o, const ActionResult& result, TimePoint now);
    void handle_load_result(Outstanding& o, const ActionResult& result, TimePoint now);

    Runtime& runtime_;
    std::shared_ptr<const ModelCatalog> catalog_;
    SchedulerConfig config_;
    ActionSink send_action_;
    ResponseSink send_response_;
    ActionLogSink action_log_;

    std::vector<WorkerState> workers_;
    std::vector<GpuState> gpus_;
    std::vector<ModelState> models_;
    std::vector<std::vector<unsigned>> placed_on_;  // model -> gpus

    std::vector<Request> requests_;
    std::vector<Handle> free_handles_;
    std::size_t live_requests_ = 0;

    std::unordered_map<ActionId, Outstanding> outstanding_;
    ActionId next_action_ = 1;

    // (priority, -last_loaded, -model); reverse iteration yields the highest
    // priority, then the least recently loaded, then the lowest id.
    using PriorityKey = std::tuple<double, TimePoint, std::int64_t>;
    std::set<PriorityKey> priority_order_;
    std::shared_ptr<bool> alive_;
};

}  // namespace clockwork
