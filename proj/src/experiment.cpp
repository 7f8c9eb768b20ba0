#include "clockwork/experiment.hpp"

#include <time.h>

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "clockwork/net.hpp"
#include "json.hpp"

namespace clockwork {

namespace {

Duration thread_cpu_now() {
    timespec ts{};
    clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
    return seconds(ts.tv_sec) + ts.tv_nsec;
}

// Adds the calling thread's CPU time to `sink` for the lifetime of the
// guard; a null sink disables metering.
class CpuMeter {
public:
    explicit CpuMeter(Duration* sink) : sink_(sink), begin_(sink ? thread_cpu_now() : 0) {}
    ~CpuMeter() {
        if (sink_) *sink_ += thread_cpu_now() - begin_;
    }
    CpuMeter(const CpuMeter&) = delete;
    CpuMeter& operator=(const CpuMeter&) = delete;

private:
    Duration* sink_;
    Duration begin_;
};

// Forwards to another runtime and meters the tasks scheduled through it, so
// scheduler timers count as controller time.
class MeteredRuntime final : public Runtime {
public:
    MeteredRuntime(Runtime& base, Duration* sink) : base_(base), sink_(sink) {}
    TimePoint now() const override { return base_.now(); }
    void at(TimePoint t, Task task) override {
        if (sink_ == nullptr) {
            base_.at(t, std::move(task));
            return;
        }
        base_.at(t, [sink = sink_, task = std::move(task)] {
            CpuMeter meter(sink);
            task();
        });
    }

private:
    Runtime& base_;
    Duration* sink_;
};

double parse_number(const std::string& value, const std::string& key) {
    try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad value '" + value + "' for " + key);
    }
}

std::uint64_t parse_count(const std::string& value, const std::string& key) {
    try {
        std::size_t used = 0;
        auto v = std::stoull(value, &used);
        if (used != value.size() || value.front() == '-') throw std::invalid_argument("bad");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad value '" + value + "' for " + key);
    }
}

std::vector<std::string> split_commas(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void validate(const ExperimentConfig& config) {
    if (!config.catalog) throw ConfigError(config.name + ": no catalog");
    if (config.workers < 1) throw ConfigError(config.name + ": workers must be >= 1");
    if (config.gpus_per_worker < 1) throw ConfigError(config.name + ": gpus_per_worker must be >= 1");
    if (config.pages_per_gpu < 1) throw ConfigError(config.name + ": pages_per_gpu must be >= 1");
    if (config.interval <= 0) throw ConfigError(config.name + ": interval must be > 0");
    if (config.workload.groups.empty()) throw ConfigError(config.name + ": workload has no groups");
    for (auto& g : config.workload.groups) {
        for (ModelId m : g.models) {
            if (!config.catalog->contains(m)) {
                throw ConfigError(config.name + ": workload uses model " + std::to_string(m) +
                                  " but the catalog has " + std::to_string(config.catalog->size()));
            }
        }
    }
}

WorkerConfig worker_config(const ExperimentConfig& config, unsigned index) {
    WorkerConfig wc;
    wc.worker_id = index;
    wc.gpu_count = config.gpus_per_worker;
    wc.pages_per_gpu = config.pages_per_gpu;
    wc.iocache_bytes = config.iocache_bytes;
    wc.jitter = config.jitter;
    return wc;
}

// Collects records on the controller thread.
struct Recorder {
    const RunOptions& options;
    std::vector<RequestRecord> requests;
    std::vector<ActionRecord> actions;

    void request(const RequestOutcome& outcome) {
        RequestRecord r = to_record(outcome);
        if (options.on_request) options.on_request(r);
        if (options.keep_requests) requests.push_back(r);
    }
    void action(const ActionOutcome& outcome) {
        if (options.on_action) options.on_action(outcome);
        if (options.keep_actions) actions.push_back(outcome);
    }
};

ExperimentResult run_simulated(const ExperimentConfig& config, const RunOptions& options) {
    auto wall_begin = std::chrono::steady_clock::now();
    SimRuntime runtime;
    Duration cpu = 0;
    MeteredRuntime metered(runtime, options.meter_controller ? &cpu : nullptr);
    Duration* meter = options.meter_controller ? &cpu : nullptr;
    Duration latency = config.network_latency;
    Recorder recorder{options, {}, {}};

    std::vector<std::unique_ptr<Worker>> workers;
    std::optional<WorkloadDriver> driver;

    Scheduler scheduler(
        metered, config.catalog, config.scheduler,
        [&](unsigned w, const Action& action) {
            runtime.at(runtime.now() + latency, [&workers, w, action] { workers[w]->on_action(action); });
        },
        [&](const RequestOutcome& outcome) {
            recorder.request(outcome);
            driver->on_response(outcome.response);
        });
    scheduler.set_action_log([&](const ActionOutcome& a) { recorder.action(a); });

    for (unsigned w = 0; w < config.workers; w++) {
        workers.push_back(std::make_unique<Worker>(
            runtime, config.catalog, worker_config(config, w),
            [&runtime, &scheduler, meter, latency, w](const ActionResult& result) {
                runtime.at(runtime.now() + latency, [&scheduler, meter, w, result] {
                    CpuMeter m(meter);
                    scheduler.on_result(w, result);
                });
            }));
        scheduler.add_worker(workers.back()->handshake());
    }

    driver.emplace(runtime, config.workload,
                   [&](const InferenceRequest& request) {
                       CpuMeter m(meter);
                       scheduler.on_request(request);
                   },
                   config.base_dir);
    TimePoint origin = 0;
    driver->start(origin);
    runtime.run();

    ExperimentResult result;
    result.stats.origin = origin;
    result.stats.end = runtime.now();
    result.stats.events = runtime.executed();
    result.stats.submitted = driver->submitted();
    result.stats.controller_cpu_seconds = to_seconds(cpu);
    for (auto& w : workers) {
        for (unsigned g = 0; g < config.gpus_per_worker; g++) {
            result.stats.gpu_busy.push_back(w->infer_busy(g));
        }
    }
    result.summary = summarize(recorder.requests, recorder.actions, config.interval, origin);
    result.requests = std::move(recorder.requests);
    result.actions = std::move(recorder.actions);
    result.stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_begin).count();
    return result;
}

ExperimentResult run_wall(const ExperimentConfig& config, const RunOptions& options) {
    auto wall_begin = std::chrono::steady_clock::now();
    std::vector<std::unique_ptr<WorkerServer>> servers;
    std::vector<std::string> addresses = config.worker_addresses;
    if (addresses.empty()) {
        for (unsigned w = 0; w < config.workers; w++) {
            servers.push_back(std::make_unique<WorkerServer>(config.catalog, worker_config(config, w),
                                                             "127.0.0.1", 0));
            servers.back()->start(true);
            addresses.push_back("127.0.0.1:" + std::to_string(servers.back()->port()));
        }
    }

    std::vector<Connection> connections;
    std::vector<WorkerHandshake> handshakes;
    for (auto& address : addresses) {
        auto [host, port] = split_address(address);
        Connection c = Connection::connect(host, port);
        auto first = c.receive();
        if (!first || !std::holds_alternative<WorkerHandshake>(*first)) {
            throw NetError("worker " + address + " did not send a handshake");
        }
        handshakes.push_back(std::get<WorkerHandshake>(*first));
        connections.push_back(std::move(c));
    }

    RealtimeRuntime runtime(ClockSource::Monotonic);
    Duration cpu = 0;
    Duration* meter = options.meter_controller ? &cpu : nullptr;
    MeteredRuntime metered(runtime, meter);
    Recorder recorder{options, {}, {}};
    std::optional<WorkloadDriver> driver;

    Scheduler scheduler(
        metered, config.catalog, config.scheduler,
        [&](unsigned w, const Action& action) {
            try {
                connections[w].send(action);
            } catch (const NetError& e) {
                std::cerr << "worker " << w << ": " << e.what() << "\n";
            }
        },
        [&](const RequestOutcome& outcome) {
            recorder.request(outcome);
            driver->on_response(outcome.response);
        });
    scheduler.set_action_log([&](const ActionOutcome& a) { recorder.action(a); });
    for (auto& hs : handshakes) scheduler.add_worker(hs);

    std::vector<std::thread> readers;
    for (unsigned w = 0; w < connections.size(); w++) {
        readers.emplace_back([&, w] {
            try {
                while (auto message = connections[w].receive()) {
                    if (auto* r = std::get_if<ActionResult>(&*message)) {
                        runtime.post([&scheduler, meter, w, result = *r] {
                            CpuMeter m(meter);
                            scheduler.on_result(w, result);
                        });
                    }
                }
            } catch (const ProtocolError& e) {
                std::cerr << "worker " << w << ": " << e.what() << "\n";
            }
        });
    }

    driver.emplace(runtime, config.workload,
                   [&](const InferenceRequest& request) {
                       CpuMeter m(meter);
                       scheduler.on_request(request);
                   },
                   config.base_dir);
    TimePoint origin = runtime.now() + millis(50);
    driver->start(origin);
    runtime.at(driver->end_time() + config.drain, [&runtime] { runtime.stop(); });
    runtime.run();

    for (auto& c : connections) c.shutdown();
    for (auto& t : readers) t.join();
    for (auto& s : servers) s->stop();

    ExperimentResult result;
    result.stats.origin = origin;
    result.stats.end = runtime.now();
    result.stats.submitted = driver->submitted();
    result.stats.controller_cpu_seconds = to_seconds(cpu);
    result.summary = summarize(recorder.requests, recorder.actions, config.interval, origin);
    result.requests = std::move(recorder.requests);
    result.actions = std::move(recorder.actions);
    result.stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_begin).count();
    return result;
}

}  // namespace

const char* to_string(ClockMode mode) {
    return mode == ClockMode::Simulated ? "sim" : "wall";
}

ClockMode parse_clock_mode(std::string_view text) {
    if (text == "sim") return ClockMode::Simulated;
    if (text == "wall") return ClockMode::WallClock;
    throw ConfigError("unknown mode '" + std::string(text) + "' (want sim or wall)");
}

void ExperimentConfig::set_seed(std::uint64_t value) {
    seed = value;
    workload.seed = value;
    jitter.seed = value;
}

ExperimentConfig parse_experiment(std::string_view text, const std::filesystem::path& base_dir,
                                  std::string_view source) {
    ExperimentConfig config;
    config.base_dir = base_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> workload_path;
    std::string inline_workload;
    bool inline_duration = false;
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_relative() ? base_dir / path : path;
    };

    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        line_no++;
        std::string line = raw;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream words(line);
        std::string key;
        if (!(words >> key)) continue;
        std::string rest;
        std::getline(words, rest);
        rest.erase(0, rest.find_first_not_of(" \t"));
        rest.erase(rest.find_last_not_of(" \t\r") + 1);
        auto where = std::string(source) + ":" + std::to_string(line_no) + ": ";
        try {
            if (key == "group") {
                inline_workload += line + "\n";
                continue;
            }
            if (rest.empty()) throw ConfigError("missing value for " + key);
            if (key == "duration_s") {
                inline_workload += line + "\n";
                inline_duration = true;
            } else if (key == "name") {
                config.name = rest;
            } else if (key == "catalog") {
                config.catalog_path = resolve(rest);
            } else if (key == "workers") {
                config.workers = static_cast<unsigned>(parse_count(rest, key));
            } else if (key == "gpus_per_worker") {
                config.gpus_per_worker = static_cast<unsigned>(parse_count(rest, key));
            } else if (key == "pages_per_gpu") {
                config.pages_per_gpu = static_cast<std::uint32_t>(parse_count(rest, key));
            } else if (key == "iocache_mb") {
                config.iocache_bytes = parse_count(rest, key) * 1024 * 1024;
            } else if (key == "jitter") {
                try {
                    config.jitter = JitterSpec::parse(rest);
                } catch (const std::invalid_argument& e) {
                    throw ConfigError(e.what());
                }
            } else if (key == "seed") {
                seed = parse_count(rest, key);
            } else if (key == "mode") {
                config.mode = parse_clock_mode(rest);
            } else if (key == "work_horizon_ms") {
                config.scheduler.work_horizon = millis_f(parse_number(rest, key));
            } else if (key == "capacity_horizon_ms") {
                config.scheduler.capacity_horizon = millis_f(parse_number(rest, key));
            } else if (key == "lead_slack_ms") {
                config.scheduler.slack.lead = millis_f(parse_number(rest, key));
            } else if (key == "tardy_slack_ms") {
                config.scheduler.slack.tardy = millis_f(parse_number(rest, key));
            } else if (key == "estimator_window") {
                config.scheduler.estimator_window = static_cast<unsigned>(parse_count(rest, key));
            } else if (key == "default_slo_ms") {
                config.scheduler.default_slo = millis_f(parse_number(rest, key));
            } else if (key == "network_latency_us") {
                config.network_latency = static_cast<Duration>(parse_number(rest, key) * 1e3);
            } else if (key == "interval_s") {
                config.interval = static_cast<Duration>(parse_number(rest, key) * 1e9);
            } else if (key == "drain_s") {
                config.drain = static_cast<Duration>(parse_number(rest, key) * 1e9);
            } else if (key == "worker_addresses") {
                config.worker_addresses = split_commas(rest);
            } else if (key == "workload") {
                workload_path = resolve(rest);
            } else {
                throw ConfigError("unknown key '" + key + "'");
            }
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }

    if (config.catalog_path.empty()) throw ConfigError(std::string(source) + ": catalog is required");
    try {
        config.catalog = std::make_shared<const ModelCatalog>(load_catalog(config.catalog_path));
    } catch (const std::exception& e) {
        throw ConfigError(std::string(source) + ": " + e.what());
    }
    try {
        WorkloadSpec inline_spec = parse_workload(inline_workload, base_dir, source);
        if (workload_path) {
            config.workload = load_workload(*workload_path);
            for (auto& g : inline_spec.groups) config.workload.groups.push_back(std::move(g));
            if (inline_duration) config.workload.duration = inline_spec.duration;
        } else {
            config.workload = std::move(inline_spec);
        }
    } catch (const WorkloadError& e) {
        throw ConfigError(e.what());
    }
    if (!config.worker_addresses.empty()) {
        config.workers = static_cast<unsigned>(config.worker_addresses.size());
    }
    if (seed) {
        config.set_seed(*seed);
    } else {
        config.seed = config.workload.seed;
    }
    validate(config);
    return config;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open experiment " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_experiment(buf.str(), path.parent_path(), path.string());
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    validate(config);
    if (config.mode == ClockMode::Simulated) return run_simulated(config, options);
    return run_wall(config, options);
}

void write_outputs(const ExperimentResult& result, const std::filesystem::path& dir, bool plots) {
    std::filesystem::create_directories(dir);
    write_request_csv(result.requests, dir / "requests.csv");
    write_action_csv(result.actions, dir / "actions.csv");
    {
        std::ofstream out(dir / "summary.json", std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir / "summary.json").string());
        out << summary_to_json(result.summary) << "\n";
    }
    {
        nlohmann::json run{{"origin_ns", result.stats.origin},
                           {"end_ns", result.stats.end},
                           {"wall_seconds", result.stats.wall_seconds},
                           {"controller_cpu_seconds", result.stats.controller_cpu_seconds},
                           {"events", result.stats.events},
                           {"submitted", result.stats.submitted},
                           {"gpu_busy_ns", result.stats.gpu_busy}};
        std::ofstream out(dir / "run.json", std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir / "run.json").string());
        out << run.dump(2) << "\n";
    }
    if (plots) write_plots(result.summary, dir / "plots");
}

}  // namespace clockwork
