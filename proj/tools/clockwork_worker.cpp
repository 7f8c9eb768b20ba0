// Standalone emulated worker serving the action protocol over TCP.

#include <csignal>
#include <cstdio>
#include <fstream>

#include "CLI11.hpp"
#include "clockwork/net.hpp"

using namespace clockwork;

namespace {

// Telemetry of an unfinished session is dropped.
void on_signal(int) {
    std::_Exit(0);
}

void write_results(const std::vector<ActionResult>& results, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "action_id,status,start_ns,end_ns,device_duration_ns\n";
    for (auto& r : results) {
        out << r.action_id << ',' << to_string(r.status) << ',' << r.start << ',' << r.end << ','
            << r.device_duration << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"clockwork emulated worker"};
    std::string listen = "0.0.0.0:12345", catalog_path, clock = "monotonic", jitter = "none",
                telemetry;
    WorkerConfig config;
    bool once = false;
    app.add_option("--listen", listen, "host:port to listen on");
    app.add_option("--catalog", catalog_path, "catalog file")->required()->check(CLI::ExistingFile);
    app.add_option("--id", config.worker_id, "worker id");
    app.add_option("--gpus", config.gpu_count, "emulated GPUs")->check(CLI::PositiveNumber);
    app.add_option("--pages", config.pages_per_gpu, "pages per GPU")->check(CLI::PositiveNumber);
    app.add_option("--clock", clock, "monotonic or realtime")
        ->check(CLI::IsMember({"monotonic", "realtime"}));
    app.add_option("--jitter", jitter, "none or lognormal:<sigma>[:<seed>]");
    app.add_option("--telemetry", telemetry, "CSV of action results, written after each session");
    app.add_flag("--once", once, "exit after the first controller session");
    CLI11_PARSE(app, argc, argv);

    try {
        config.jitter = JitterSpec::parse(jitter);
        auto catalog = std::make_shared<const ModelCatalog>(load_catalog(catalog_path));
        auto [host, port] = split_address(listen);
        WorkerServer server(catalog, config, host, port,
                            clock == "realtime" ? ClockSource::Realtime : ClockSource::Monotonic);
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::printf("worker %u listening on %s:%u with %u gpu(s), %zu models\n", config.worker_id,
                    host.c_str(), server.port(), config.gpu_count, catalog->size());
        std::fflush(stdout);
        do {
            server.serve(true);
            if (!telemetry.empty()) write_results(server.last_results(), telemetry);
        } while (!once);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
