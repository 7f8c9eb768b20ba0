#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "clockwork/profiles.hpp"
#include "clockwork/runtime.hpp"
#include "clockwork/scheduler.hpp"
#include "clockwork/telemetry.hpp"
#include "clockwork/worker.hpp"
#include "clockwork/workload.hpp"

namespace clockwork {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ClockMode { Simulated, WallClock };

const char* to_string(ClockMode mode);
ClockMode parse_clock_mode(std::string_view text);  // "sim" or "wall"

// Experiment file, one `key value` per line, '#' comments:
//
//   name <text>
//   catalog <path>                    relative to the config file
//   workers <n>
//   gpus_per_worker <n>
//   pages_per_gpu <n>
//   iocache_mb <n>
//   jitter none|lognormal:<sigma>
//   seed <n>                          overrides the workload and jitter seeds
//   mode sim|wall
//   work_horizon_ms, capacity_horizon_ms, lead_slack_ms, tardy_slack_ms,
//   estimator_window, default_slo_ms
//   network_latency_us <us>           one-way, simulated mode only
//   interval_s <s>                    summary bucket width
//   drain_s <s>                       run time after the workload ends
//   worker_addresses <host:port,...>  wall mode; empty spawns local servers
//   workload <path>                   workload spec file
//   duration_s <s>                    workload horizon
//   group ...                         inline workload group (workload grammar)
struct ExperimentConfig {
    std::string name = "experiment";
    std::filesystem::path catalog_path;
    std::shared_ptr<const ModelCatalog> catalog;
    unsigned workers = 1;
    unsigned gpus_per_worker = 1;
    std::uint32_t pages_per_gpu = 500;
    std::uint64_t iocache_bytes = 512ull * 1024 * 1024;
    JitterSpec jitter;
    std::uint64_t seed = 1;
    ClockMode mode = ClockMode::Simulated;
    SchedulerConfig scheduler;
    Duration network_latency = 0;
    Duration interval = seconds(1);
    Duration drain = seconds(2);
    std::vector<std::string> worker_addresses;
    WorkloadSpec workload;
    std::filesystem::path base_dir;

    // Reseeds the workload and the jitter stream.
    void set_seed(std::uint64_t value);
};

ExperimentConfig parse_experiment(std::string_view text, const std::filesystem::path& base_dir = {},
                                  std::string_view source = "<string>");
ExperimentConfig load_experiment(const std::filesystem::path& path);

struct RunStats {
    TimePoint origin = 0;  // workload start
    TimePoint end = 0;
    double wall_seconds = 0;
    // CPU time spent inside the scheduler (requests, results, timers).
    double controller_cpu_seconds = 0;
    std::uint64_t events = 0;  // simulated mode
    std::uint64_t submitted = 0;
    std::vector<Duration> gpu_busy;  // Infer executor busy time, local workers only
};

struct ExperimentResult {
    std::vector<RequestRecord> requests;
    std::vector<ActionRecord> actions;
    SummaryReport summary;
    RunStats stats;
};

struct RunOptions {
    bool keep_requests = true;
    bool keep_actions = true;
    bool meter_controller = false;
    // Called for every record as it is produced.
    std::function<void(const RequestRecord&)> on_request;
    std::function<void(const ActionRecord&)> on_action;
};

// Runs the workload to completion: in simulated mode until no events remain,
// in wall mode until workload end plus the drain time. Throws ConfigError or
// NetError.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

// requests.csv, actions.csv, summary.json and optional SVG plots.
void write_outputs(const ExperimentResult& result, const std::filesystem::path& dir,
                   bool plots = true);

}  // namespace clockwork
