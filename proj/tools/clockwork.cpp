// Experiment runner: run, summarize, plot, gen-trace.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "clockwork/experiment.hpp"
#include "clockwork/telemetry.hpp"
#include "clockwork/workload.hpp"

using namespace clockwork;

namespace {

constexpr int kExitSloViolation = 3;

void print_summary(const SummaryReport& s) {
    std::printf("offered %llu  goodput %llu  denied %llu  timeout %llu  cold %llu\n",
                static_cast<unsigned long long>(s.offered), static_cast<unsigned long long>(s.goodput),
                static_cast<unsigned long long>(s.denied), static_cast<unsigned long long>(s.timeout),
                static_cast<unsigned long long>(s.cold_starts));
    std::printf("satisfaction %.6f  goodput %.1f r/s  p50 %.3f ms  p99 %.3f ms  max %.3f ms  batch %.2f\n",
                s.satisfaction, s.goodput_per_s, to_millis(s.p50), to_millis(s.p99), to_millis(s.max),
                s.mean_batch);
    std::printf("hard-slo violations %llu\n", static_cast<unsigned long long>(s.hard_slo_violations));
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"clockwork experiment runner"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run an experiment config");
    std::string config_path, mode, out_dir, workload_path;
    std::uint64_t seed = 0;
    double scale = 1.0;
    bool no_plots = false;
    run->add_option("--config", config_path, "experiment file")->required()->check(CLI::ExistingFile);
    auto* seed_opt = run->add_option("--seed", seed, "override the seed");
    run->add_option("--mode", mode, "sim or wall")->check(CLI::IsMember({"sim", "wall"}));
    run->add_option("--out", out_dir, "directory for logs, summary and plots");
    run->add_option("--workload", workload_path, "replace the config's workload")
        ->check(CLI::ExistingFile);
    run->add_option("--scale", scale, "multiply open-loop rates and trace scales")
        ->check(CLI::PositiveNumber);
    run->add_flag("--no-plots", no_plots, "skip SVG output");

    auto* summ = app.add_subcommand("summarize", "summarize request and action logs");
    std::string logs_dir;
    double interval_s = 1.0;
    summ->add_option("--logs", logs_dir, "directory with requests.csv and actions.csv")
        ->required()
        ->check(CLI::ExistingDirectory);
    summ->add_option("--interval", interval_s, "bucket width in seconds")->check(CLI::PositiveNumber);

    auto* plot = app.add_subcommand("plot", "render SVG plots from summary.json");
    std::string report_path, plot_dir;
    plot->add_option("--report", report_path, "summary.json")->required()->check(CLI::ExistingFile);
    plot->add_option("--out", plot_dir, "output directory (default: next to the report)");

    auto* gen = app.add_subcommand("gen-trace", "write a synthetic invocation trace");
    SyntheticTraceSpec trace_spec;
    std::string trace_out;
    gen->add_option("--workloads", trace_spec.workloads, "number of workloads");
    gen->add_option("--minutes", trace_spec.minutes, "trace length");
    gen->add_option("--seed", trace_spec.seed, "generator seed");
    gen->add_option("--heavy-per-minute", trace_spec.heavy_per_minute, "mean rate of heavy workloads");
    gen->add_option("--out", trace_out, "CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            ExperimentConfig config = load_experiment(config_path);
            if (!workload_path.empty()) {
                config.workload = load_workload(workload_path);
                config.base_dir = std::filesystem::path(workload_path).parent_path();
                if (!*seed_opt) config.set_seed(config.workload.seed);
            }
            if (*seed_opt) config.set_seed(seed);
            if (!mode.empty()) config.mode = parse_clock_mode(mode);
            if (scale != 1.0) scale_workload(config.workload, scale);
            RunOptions options;
            options.meter_controller = true;
            options.keep_actions = !out_dir.empty();
            auto result = run_experiment(config, options);
            std::printf("%s (%s, seed %llu): %.1fs wall, controller cpu %.3fs\n", config.name.c_str(),
                        to_string(config.mode), static_cast<unsigned long long>(config.seed),
                        result.stats.wall_seconds, result.stats.controller_cpu_seconds);
            print_summary(result.summary);
            if (!out_dir.empty()) write_outputs(result, out_dir, !no_plots);
            return result.summary.hard_slo_violations == 0 ? 0 : kExitSloViolation;
        }
        if (summ->parsed()) {
            std::filesystem::path dir(logs_dir);
            auto requests = read_request_csv(dir / "requests.csv");
            std::vector<ActionRecord> actions;
            if (std::filesystem::exists(dir / "actions.csv")) actions = read_action_csv(dir / "actions.csv");
            TimePoint origin = kNever;
            for (auto& r : requests) origin = std::min(origin, r.arrival);
            if (requests.empty()) origin = 0;
            auto report = summarize(requests, actions, static_cast<Duration>(interval_s * 1e9), origin);
            std::ofstream out(dir / "summary.json", std::ios::binary);
            out << summary_to_json(report) << "\n";
            print_summary(report);
            return report.hard_slo_violations == 0 ? 0 : kExitSloViolation;
        }
        if (plot->parsed()) {
            auto report = summary_from_json(read_file(report_path));
            std::filesystem::path dir = plot_dir.empty()
                                            ? std::filesystem::path(report_path).parent_path() / "plots"
                                            : std::filesystem::path(plot_dir);
            for (auto& p : write_plots(report, dir)) std::printf("%s\n", p.c_str());
            return 0;
        }
        if (gen->parsed()) {
            auto trace = synthesize_maf_trace(trace_spec);
            save_trace(trace.trace, trace_out);
            std::printf("%u workloads, %u minutes, %llu invocations\n", trace_spec.workloads,
                        trace_spec.minutes, static_cast<unsigned long long>(trace.trace.total()));
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
