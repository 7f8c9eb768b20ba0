#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clockwork/protocol.hpp"
#include "clockwork/scheduler.hpp"

namespace clockwork {

struct RequestRecord {
    RequestId request_id = 0;
    ModelId model_id = 0;
    TimePoint arrival = 0;
    TimePoint deadline = 0;  // arrival + slo
    ResponseStatus status = ResponseStatus::Ok;
    Duration latency = 0;
    unsigned batch_size = 0;  // 0 if denied
    bool cold_start = false;

    Duration slo() const { return deadline - arrival; }
    bool operator==(const RequestRecord&) const = default;
};

RequestRecord to_record(const RequestOutcome& outcome);

using ActionRecord = ActionOutcome;

// Measured minus predicted; only meaningful for successful actions.
inline Duration duration_error(const ActionRecord& a) {
    return a.result.device_duration - a.predicted_duration;
}
inline Duration completion_error(const ActionRecord& a) {
    return a.result.start + a.result.device_duration - a.predicted_end;
}

struct IntervalStats {
    TimePoint start = 0;
    std::uint64_t offered = 0;
    std::uint64_t goodput = 0;
    std::uint64_t denied = 0;
    std::uint64_t timeout = 0;
    std::uint64_t cold_starts = 0;
    double satisfaction = 1.0;
    Duration p50 = 0;
    Duration p99 = 0;
    Duration max = 0;
    double mean_batch = 0;
};

// Quantiles of a distribution at 0, 1, ..., 100 percent (nearest rank).
struct Distribution {
    std::uint64_t count = 0;
    std::vector<Duration> quantiles;
};

Distribution make_distribution(std::vector<Duration> values);

struct SummaryReport {
    Duration interval = seconds(1);
    std::vector<IntervalStats> series;
    std::uint64_t offered = 0;
    std::uint64_t goodput = 0;
    std::uint64_t denied = 0;
    std::uint64_t timeout = 0;
    std::uint64_t cold_starts = 0;
    std::uint64_t hard_slo_violations = 0;  // Ok with latency > slo
    double satisfaction = 1.0;
    Duration p50 = 0;
    Duration p99 = 0;
    Duration max = 0;
    double mean_batch = 0;
    double duration_s = 0;
    double goodput_per_s = 0;
    // Prediction error magnitudes for successful actions.
    Distribution infer_over;
    Distribution infer_under;
    Distribution load_over;
    Distribution load_under;
    Distribution completion_over;
    Distribution completion_under;
    std::uint64_t infer_actions = 0;
    std::uint64_t load_actions = 0;
    std::uint64_t rejected_actions = 0;
};

// Aggregates per `interval`, bucketing by arrival time from `origin`.
SummaryReport summarize(const std::vector<RequestRecord>& requests,
                        const std::vector<ActionRecord>& actions, Duration interval = seconds(1),
                        TimePoint origin = 0);

constexpr const char* kRequestCsvHeader =
    "request_id,model_id,arrival_ns,deadline_ns,status,latency_ns,batch_size,cold_start";
constexpr const char* kActionCsvHeader =
    "action_id,kind,worker,gpu,model_id,batch_size,status,predicted_duration_ns,"
    "measured_duration_ns,predicted_start_ns,predicted_end_ns,actual_start_ns,actual_end_ns,"
    "earliest_ns,latest_ns";

void write_request_csv(const std::vector<RequestRecord>& records, const std::filesystem::path& path);
void write_action_csv(const std::vector<ActionRecord>& records, const std::filesystem::path& path);
std::vector<RequestRecord> read_request_csv(const std::filesystem::path& path);
std::vector<ActionRecord> read_action_csv(const std::filesystem::path& path);

std::string summary_to_json(const SummaryReport& report, int indent = 2);
SummaryReport summary_from_json(const std::string& text);

// SVG line charts. Each series is a list of (x, y) points.
struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<PlotSeries>& series);
// Empirical CDF of the quantile points (x = value, y = fraction).
PlotSeries cdf_series(const std::string& label, const Distribution& d, double scale = 1.0);

// Writes summary plots (throughput, latency, prediction-error CDFs) next to
// the report. Returns the files written.
std::vector<std::filesystem::path> write_plots(const SummaryReport& report,
                                               const std::filesystem::path& dir);

}  // namespace clockwork
