#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "clockwork/protocol.hpp"
#include "clockwork/runtime.hpp"

namespace clockwork {

class WorkloadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Exponential inter-arrival times with a piecewise-constant rate. Draws are
// lazy so arbitrarily long horizons cost O(1) memory.
class PoissonArrivals {
public:
    // Throws std::invalid_argument unless rate > 0.
    PoissonArrivals(double rate_per_s, std::uint64_t seed, TimePoint start = 0);

    // Strictly increasing.
    TimePoint next();
    // Applies to gaps drawn from `from` onwards.
    void set_rate(double rate_per_s, TimePoint from);
    double rate() const { return rate_; }

private:
    double rate_;
    TimePoint last_;
    std::mt19937_64 rng_;
    std::exponential_distribution<double> gap_{1.0};
};

// All arrivals in [start, start + horizon).
std::vector<TimePoint> gen_open_loop(double rate_per_s, std::uint64_t seed, Duration horizon,
                                     TimePoint start = 0);

struct TraceRow {
    std::uint32_t workload = 0;
    std::uint32_t minute = 0;
    std::uint64_t count = 0;
    bool operator==(const TraceRow&) const = default;
};

// Per-minute invocation counts, one row per (workload, minute).
struct InvocationTrace {
    std::vector<TraceRow> rows;

    std::uint32_t minutes() const;  // one past the last minute index
    std::vector<std::uint32_t> workloads() const;
    std::uint64_t total() const;
    // Total count per minute across workloads.
    std::vector<std::uint64_t> per_minute() const;
};

// CSV with header `workload_id,minute,count`.
InvocationTrace parse_trace(std::string_view csv, std::string_view source = "<string>");
InvocationTrace load_trace(const std::filesystem::path& path);
std::string format_trace(const InvocationTrace& trace);
void save_trace(const InvocationTrace& trace, const std::filesystem::path& path);

// Synthetic stand-in for a serverless invocation trace: a mix of heavy,
// cold, bursty and periodic workloads. Periodic workloads spike every 5, 15
// or 60 minutes.
struct SyntheticTraceSpec {
    std::uint32_t workloads = 100;
    std::uint32_t minutes = 60;
    double heavy_fraction = 0.05;
    double bursty_fraction = 0.15;
    double periodic_fraction = 0.25;
    double heavy_per_minute = 600;
    double cold_per_minute = 0.5;
    std::uint64_t seed = 1;
};

enum class WorkloadClass { Heavy, Cold, Bursty, Periodic };

struct SyntheticTrace {
    InvocationTrace trace;
    std::vector<WorkloadClass> classes;  // per workload id
    std::vector<std::uint32_t> periods;  // spike period in minutes, periodic only
};

SyntheticTrace synthesize_maf_trace(const SyntheticTraceSpec& spec);

struct Arrival {
    TimePoint time = 0;
    ModelId model = 0;
    bool operator==(const Arrival&) const = default;
};

// Replays counts: each (workload, minute) row yields floor(scale) * count
// arrivals plus a Binomial(count, frac(scale)) thinned remainder, placed
// uniformly over the minute. `scale_at(minute)` overrides the scale when set.
// Output is sorted by time. Throws WorkloadError for unmapped workloads.
std::vector<Arrival> replay_trace(const InvocationTrace& trace,
                                  const std::unordered_map<std::uint32_t, ModelId>& mapping,
                                  double scale, std::uint64_t seed, TimePoint start = 0,
                                  Duration minute = seconds(60),
                                  const std::function<double(std::uint32_t)>& scale_at = {});

// Round-robin mapping of trace workloads onto models.
std::unordered_map<std::uint32_t, ModelId> round_robin_mapping(const InvocationTrace& trace,
                                                               const std::vector<ModelId>& models);

// One line per client group:
//
//   seed <n>
//   duration_s <seconds>
//   group kind=open|closed|trace models=<a-b,c,...> [key=value ...]
//
// Group keys: slo_ms, start_s, end_s, rate (open, r/s for the whole group),
// rate_step + step_s (open: rate grows by rate_step every step_s),
// activate_every_s (open: models become active one at a time),
// concurrency (closed, per model), slo_sweep=<from_ms>:<to_ms>:<factor>:<step_s>,
// trace=<csv path> or synthetic=<workloads>:<minutes>:<seed> (trace),
// scale, scale_step + step_s (trace), minute_s (trace), name.
struct ClientGroup {
    enum class Kind { Open, Closed, Trace };
    Kind kind = Kind::Open;
    std::string name;
    std::vector<ModelId> models;
    Duration slo = millis(100);
    TimePoint start = 0;
    TimePoint end = kNever;  // clamped to the run duration
    double rate = 0;
    double rate_step = 0;
    Duration step = 0;
    Duration activate_every = 0;
    unsigned concurrency = 1;
    // SLO sweep: slo = from * factor^k for step k while <= to.
    Duration sweep_from = 0;
    Duration sweep_to = 0;
    double sweep_factor = 0;
    Duration sweep_step = 0;
    std::string trace_path;
    SyntheticTraceSpec synthetic;
    bool use_synthetic = false;
    double scale = 1.0;
    double scale_step = 0;
    Duration minute = seconds(60);

    Duration slo_at(TimePoint t) const;
    double rate_at(TimePoint t) const;
    std::size_t active_models(TimePoint t) const;
};

struct WorkloadSpec {
    std::vector<ClientGroup> groups;
    std::uint64_t seed = 1;
    Duration duration = seconds(60);
};

std::vector<ModelId> parse_model_list(std::string_view text);
WorkloadSpec parse_workload(std::string_view text, const std::filesystem::path& base_dir = {},
                            std::string_view source = "<string>");
WorkloadSpec load_workload(const std::filesystem::path& path);

// Multiplies open-loop rates and trace scales by `factor` (> 0).
void scale_workload(WorkloadSpec& spec, double factor);

// Turns a WorkloadSpec into InferenceRequests on a runtime. Open-loop and
// trace groups never wait for responses; closed-loop groups keep exactly
// `concurrency` requests outstanding per model and reissue on each response.
class WorkloadDriver {
public:
    using Submit = std::function<void(const InferenceRequest&)>;

    WorkloadDriver(Runtime& runtime, WorkloadSpec spec, Submit submit,
                   const std::filesystem::path& base_dir = {});
    ~WorkloadDriver();

    WorkloadDriver(const WorkloadDriver&) = delete;
    WorkloadDriver& operator=(const WorkloadDriver&) = delete;

    // Schedules the first arrivals relative to `origin`.
    void start(TimePoint origin);

    // Feed every response back; closed-loop groups reissue immediately.
    void on_response(const InferenceResponse& response);

    std::uint64_t submitted() const { return submitted_; }
    std::size_t closed_outstanding() const { return closed_outstanding_.size(); }
    const WorkloadSpec& spec() const { return spec_; }
    TimePoint end_time() const { return origin_ + spec_.duration; }

private:
    struct OpenState {
        std::unique_ptr<PoissonArrivals> arrivals;
        std::mt19937_64 pick;
        TimePoint next = kNever;
    };
    struct TraceState {
        std::vector<Arrival> arrivals;
        std::size_t next = 0;
    };

    void schedule_open(std::size_t g);
    void schedule_trace(std::size_t g);
    void issue(std::size_t g, ModelId model);
    TimePoint group_end(const ClientGroup& group) const;

    Runtime& runtime_;
    WorkloadSpec spec_;
    Submit submit_;
    std::filesystem::path base_dir_;
    TimePoint origin_ = 0;
    RequestId next_id_ = 1;
    std::uint64_t submitted_ = 0;
    std::vector<OpenState> open_;
    std::vector<TraceState> trace_;
    std::unordered_map<RequestId, std::pair<std::uint32_t, ModelId>> closed_outstanding_;
    std::shared_ptr<bool> alive_;
};

}  // namespace clockwork
