#include "clockwork/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace clockwork {

namespace {

using nlohmann::json;

template <typename E>
E parse_enum(const std::string& text, std::initializer_list<E> values) {
    for (E v : values) {
        if (text == to_string(v)) return v;
    }
    throw std::runtime_error("unknown enum value '" + text + "'");
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return in;
}

json distribution_json(const Distribution& d) {
    return json{{"count", d.count}, {"quantiles_ns", d.quantiles}};
}

Distribution distribution_from(const json& j) {
    Distribution d;
    d.count = j.at("count").get<std::uint64_t>();
    d.quantiles = j.at("quantiles_ns").get<std::vector<Duration>>();
    return d;
}

}  // namespace

RequestRecord to_record(const RequestOutcome& outcome) {
    RequestRecord r;
    r.request_id = outcome.response.id;
    r.model_id = outcome.model_id;
    r.arrival = outcome.arrival;
    r.deadline = outcome.arrival + outcome.slo;
    r.status = outcome.response.status;
    r.latency = outcome.response.latency;
    r.batch_size = outcome.batch_size;
    r.cold_start = outcome.response.cold_start;
    return r;
}

Distribution make_distribution(std::vector<Duration> values) {
    Distribution d;
    d.count = values.size();
    if (values.empty()) return d;
    std::sort(values.begin(), values.end());
    d.quantiles.reserve(101);
    for (int q = 0; q <= 100; q++) {
        if (q == 0) {
            d.quantiles.push_back(values.front());
            continue;
        }
        auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(values.size())));
        d.quantiles.push_back(values[std::clamp<std::size_t>(rank, 1, values.size()) - 1]);
    }
    return d;
}

SummaryReport summarize(const std::vector<RequestRecord>& requests,
                        const std::vector<ActionRecord>& actions, Duration interval,
                        TimePoint origin) {
    if (interval <= 0) throw std::invalid_argument("summary interval must be > 0");
    SummaryReport report;
    report.interval = interval;

    TimePoint last = origin;
    for (auto& r : requests) last = std::max(last, r.arrival);
    std::size_t buckets = requests.empty() ? 0 : static_cast<std::size_t>((last - origin) / interval) + 1;
    report.series.resize(buckets);
    std::vector<std::vector<Duration>> latencies(buckets);
    std::vector<std::uint64_t> batch_sum(buckets, 0);
    std::vector<Duration> all_ok;
    all_ok.reserve(requests.size());
    std::uint64_t total_batch = 0;

    for (std::size_t i = 0; i < buckets; i++) {
        report.series[i].start = origin + static_cast<Duration>(i) * interval;
    }
    for (auto& r : requests) {
        if (r.arrival < origin) continue;
        auto i = static_cast<std::size_t>((r.arrival - origin) / interval);
        auto& s = report.series[i];
        s.offered++;
        if (r.cold_start) s.cold_starts++;
        switch (r.status) {
            case ResponseStatus::Ok:
                s.goodput++;
                latencies[i].push_back(r.latency);
                batch_sum[i] += r.batch_size;
                all_ok.push_back(r.latency);
                total_batch += r.batch_size;
                if (r.latency > r.slo()) report.hard_slo_violations++;
                break;
            case ResponseStatus::Denied:
                s.denied++;
                break;
            case ResponseStatus::Timeout:
                s.timeout++;
                break;
        }
    }
    for (std::size_t i = 0; i < buckets; i++) {
        auto& s = report.series[i];
        report.offered += s.offered;
        report.goodput += s.goodput;
        report.denied += s.denied;
        report.timeout += s.timeout;
        report.cold_starts += s.cold_starts;
        s.satisfaction = s.offered == 0 ? 1.0 : static_cast<double>(s.goodput) / s.offered;
        if (!latencies[i].empty()) {
            s.p50 = nearest_rank_percentile(latencies[i], 50);
            s.p99 = nearest_rank_percentile(latencies[i], 99);
            s.max = *std::max_element(latencies[i].begin(), latencies[i].end());
            s.mean_batch = static_cast<double>(batch_sum[i]) / latencies[i].size();
        }
    }
    report.satisfaction =
        report.offered == 0 ? 1.0 : static_cast<double>(report.goodput) / report.offered;
    if (!all_ok.empty()) {
        report.p50 = nearest_rank_percentile(all_ok, 50);
        report.p99 = nearest_rank_percentile(all_ok, 99);
        report.max = *std::max_element(all_ok.begin(), all_ok.end());
        report.mean_batch = static_cast<double>(total_batch) / all_ok.size();
    }
    report.duration_s = to_seconds(static_cast<Duration>(buckets) * interval);
    report.goodput_per_s = report.duration_s > 0 ? report.goodput / report.duration_s : 0;

    std::vector<Duration> infer_over, infer_under, load_over, load_under, comp_over, comp_under;
    for (auto& a : actions) {
        if (a.kind == ActionKind::Unload) continue;
        if (a.result.status != ActionStatus::Success) {
            report.rejected_actions++;
            continue;
        }
        Duration err = duration_error(a);
        if (a.kind == ActionKind::Infer) {
            report.infer_actions++;
            (err > 0 ? infer_under : infer_over).push_back(std::abs(err));
            Duration c = completion_error(a);
            (c > 0 ? comp_under : comp_over).push_back(std::abs(c));
        } else {
            report.load_actions++;
            (err > 0 ? load_under : load_over).push_back(std::abs(err));
        }
    }
    report.infer_over = make_distribution(std::move(infer_over));
    report.infer_under = make_distribution(std::move(infer_under));
    report.load_over = make_distribution(std::move(load_over));
    report.load_under = make_distribution(std::move(load_under));
    report.completion_over = make_distribution(std::move(comp_over));
    report.completion_under = make_distribution(std::move(comp_under));
    return report;
}

void write_request_csv(const std::vector<RequestRecord>& records, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << kRequestCsvHeader << '\n';
    for (auto& r : records) {
        out << r.request_id << ',' << r.model_id << ',' << r.arrival << ',' << r.deadline << ','
            << to_string(r.status) << ',' << r.latency << ',' << r.batch_size << ','
            << (r.cold_start ? 1 : 0) << '\n';
    }
}

void write_action_csv(const std::vector<ActionRecord>& records, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << kActionCsvHeader << '\n';
    for (auto& a : records) {
        out << a.id << ',' << to_string(a.kind) << ',' << a.worker << ',' << a.gpu << ','
            << a.model_id << ',' << a.batch_size << ',' << to_string(a.result.status) << ','
            << a.predicted_duration << ',' << a.result.device_duration << ','
            << a.predicted_start << ',' << a.predicted_end << ',' << a.result.start << ','
            << a.result.end << ',' << a.earliest << ',' << a.latest << '\n';
    }
}

std::vector<RequestRecord> read_request_csv(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line) || line != kRequestCsvHeader) {
        throw std::runtime_error(path.string() + ": unexpected request log header");
    }
    std::vector<RequestRecord> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        line_no++;
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() != 8) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected 8 fields");
        }
        RequestRecord r;
        r.request_id = std::stoull(f[0]);
        r.model_id = static_cast<ModelId>(std::stoul(f[1]));
        r.arrival = std::stoll(f[2]);
        r.deadline = std::stoll(f[3]);
        r.status = parse_enum(f[4], {ResponseStatus::Ok, ResponseStatus::Denied, ResponseStatus::Timeout});
        r.latency = std::stoll(f[5]);
        r.batch_size = static_cast<unsigned>(std::stoul(f[6]));
        r.cold_start = f[7] == "1";
        out.push_back(r);
    }
    return out;
}

std::vector<ActionRecord> read_action_csv(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line) || line != kActionCsvHeader) {
        throw std::runtime_error(path.string() + ": unexpected action log header");
    }
    std::vector<ActionRecord> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        line_no++;
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() != 15) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected 15 fields");
        }
        ActionRecord a;
        a.id = std::stoull(f[0]);
        a.kind = parse_enum(f[1], {ActionKind::Load, ActionKind::Unload, ActionKind::Infer});
        a.worker = static_cast<unsigned>(std::stoul(f[2]));
        a.gpu = static_cast<unsigned>(std::stoul(f[3]));
        a.model_id = static_cast<ModelId>(std::stoul(f[4]));
        a.batch_size = static_cast<unsigned>(std::stoul(f[5]));
        a.result.action_id = a.id;
        a.result.status = parse_enum(
            f[6], {ActionStatus::Success, ActionStatus::RejectedTooLate, ActionStatus::OutOfPages,
                   ActionStatus::ModelNotLoaded, ActionStatus::MalformedAction});
        a.predicted_duration = std::stoll(f[7]);
        a.result.device_duration = std::stoll(f[8]);
        a.predicted_start = std::stoll(f[9]);
        a.predicted_end = std::stoll(f[10]);
        a.result.start = std::stoll(f[11]);
        a.result.end = std::stoll(f[12]);
        a.earliest = std::stoll(f[13]);
        a.latest = std::stoll(f[14]);
        out.push_back(a);
    }
    return out;
}

std::string summary_to_json(const SummaryReport& r, int indent) {
    json series = json::array();
    for (auto& s : r.series) {
        series.push_back({{"start_ns", s.start},
                          {"offered", s.offered},
                          {"goodput", s.goodput},
                          {"denied", s.denied},
                          {"timeout", s.timeout},
                          {"cold_starts", s.cold_starts},
                          {"satisfaction", s.satisfaction},
                          {"p50_ns", s.p50},
                          {"p99_ns", s.p99},
                          {"max_ns", s.max},
                          {"mean_batch", s.mean_batch}});
    }
    json j{{"interval_ns", r.interval},
           {"offered", r.offered},
           {"goodput", r.goodput},
           {"denied", r.denied},
           {"timeout", r.timeout},
           {"cold_starts", r.cold_starts},
           {"hard_slo_violations", r.hard_slo_violations},
           {"satisfaction", r.satisfaction},
           {"p50_ns", r.p50},
           {"p99_ns", r.p99},
           {"max_ns", r.max},
           {"mean_batch", r.mean_batch},
           {"duration_s", r.duration_s},
           {"goodput_per_s", r.goodput_per_s},
           {"infer_actions", r.infer_actions},
           {"load_actions", r.load_actions},
           {"rejected_actions", r.rejected_actions},
           {"infer_overprediction", distribution_json(r.infer_over)},
           {"infer_underprediction", distribution_json(r.infer_under)},
           {"load_overprediction", distribution_json(r.load_over)},
           {"load_underprediction", distribution_json(r.load_under)},
           {"completion_overprediction", distribution_json(r.completion_over)},
           {"completion_underprediction", distribution_json(r.completion_under)},
           {"series", series}};
    return j.dump(indent);
}

SummaryReport summary_from_json(const std::string& text) {
    json j = json::parse(text);
    SummaryReport r;
    r.interval = j.at("interval_ns").get<Duration>();
    r.offered = j.at("offered").get<std::uint64_t>();
    r.goodput = j.at("goodput").get<std::uint64_t>();
    r.denied = j.at("denied").get<std::uint64_t>();
    r.timeout = j.at("timeout").get<std::uint64_t>();
    r.cold_starts = j.at("cold_starts").get<std::uint64_t>();
    r.hard_slo_violations = j.at("hard_slo_violations").get<std::uint64_t>();
    r.satisfaction = j.at("satisfaction").get<double>();
    r.p50 = j.at("p50_ns").get<Duration>();
    r.p99 = j.at("p99_ns").get<Duration>();
    r.max = j.at("max_ns").get<Duration>();
    r.mean_batch = j.at("mean_batch").get<double>();
    r.duration_s = j.at("duration_s").get<double>();
    r.goodput_per_s = j.at("goodput_per_s").get<double>();
    r.infer_actions = j.at("infer_actions").get<std::uint64_t>();
    r.load_actions = j.at("load_actions").get<std::uint64_t>();
    r.rejected_actions = j.at("rejected_actions").get<std::uint64_t>();
    r.infer_over = distribution_from(j.at("infer_overprediction"));
    r.infer_under = distribution_from(j.at("infer_underprediction"));
    r.load_over = distribution_from(j.at("load_overprediction"));
    r.load_under = distribution_from(j.at("load_underprediction"));
    r.completion_over = distribution_from(j.at("completion_overprediction"));
    r.completion_under = distribution_from(j.at("completion_underprediction"));
    for (auto& s : j.at("series")) {
        IntervalStats st;
        st.start = s.at("start_ns").get<TimePoint>();
        st.offered = s.at("offered").get<std::uint64_t>();
        st.goodput = s.at("goodput").get<std::uint64_t>();
        st.denied = s.at("denied").get<std::uint64_t>();
        st.timeout = s.at("timeout").get<std::uint64_t>();
        st.cold_starts = s.at("cold_starts").get<std::uint64_t>();
        st.satisfaction = s.at("satisfaction").get<double>();
        st.p50 = s.at("p50_ns").get<Duration>();
        st.p99 = s.at("p99_ns").get<Duration>();
        st.max = s.at("max_ns").get<Duration>();
        st.mean_batch = s.at("mean_batch").get<double>();
        r.series.push_back(st);
    }
    return r;
}

// ------------------------------------------------------------------- plots

namespace {

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(6);
    out << v;
    return out.str();
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<PlotSeries>& series) {
    const double width = 640, height = 400, left = 70, right = 20, top = 40, bottom = 50;
    double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
    bool first = true;
    for (auto& s : series) {
        for (auto& [x, y] : s.points) {
            if (first) {
                x_min = x_max = x;
                y_min = std::min(0.0, y);
                y_max = y;
                first = false;
            }
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    }
    if (x_max <= x_min) x_max = x_min + 1;
    if (y_max <= y_min) y_max = y_min + 1;
    auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * (width - left - right); };
    auto py = [&](double y) { return height - bottom - (y - y_min) / (y_max - y_min) * (height - top - bottom); };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
        << escape_xml(title) << "</text>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << height - bottom << "\" x2=\"" << width - right
        << "\" y2=\"" << height - bottom << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
        << height - bottom << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; i++) {
        double xv = x_min + (x_max - x_min) * i / 4;
        double yv = y_min + (y_max - y_min) * i / 4;
        out << "<text x=\"" << px(xv) << "\" y=\"" << height - bottom + 16
            << "\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n";
        out << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
            << fmt(yv) << "</text>\n";
    }
    out << "<text x=\"" << (left + width - right) / 2 << "\" y=\"" << height - 10
        << "\" text-anchor=\"middle\">" << escape_xml(x_label) << "</text>\n";
    out << "<text x=\"15\" y=\"" << (top + height - bottom) / 2
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 " << (top + height - bottom) / 2
        << ")\">" << escape_xml(y_label) << "</text>\n";
    for (std::size_t i = 0; i < series.size(); i++) {
        const char* color = colors[i % std::size(colors)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (auto& [x, y] : series[i].points) out << fmt(px(x)) << "," << fmt(py(y)) << " ";
        out << "\"/>\n";
        out << "<text x=\"" << width - right - 5 << "\" y=\"" << top + 14 * (i + 1)
            << "\" text-anchor=\"end\" fill=\"" << color << "\">" << escape_xml(series[i].label)
            << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

PlotSeries cdf_series(const std::string& label, const Distribution& d, double scale) {
    PlotSeries s{label, {}};
    for (std::size_t q = 0; q < d.quantiles.size(); q++) {
        s.points.emplace_back(static_cast<double>(d.quantiles[q]) * scale, q / 100.0);
    }
    return s;
}

std::vector<std::filesystem::path> write_plots(const SummaryReport& report,
                                               const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    auto save = [&](const std::string& name, const std::string& svg) {
        auto path = dir / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << svg;
        written.push_back(path);
    };
    double per_s = 1e9 / static_cast<double>(report.interval);
    PlotSeries offered{"offered", {}}, goodput{"goodput", {}}, p99{"p99", {}}, maxl{"max", {}},
        cold{"cold-start fraction", {}};
    for (auto& s : report.series) {
        double t = to_seconds(s.start - (report.series.empty() ? 0 : report.series.front().start));
        offered.points.emplace_back(t, s.offered * per_s);
        goodput.points.emplace_back(t, s.goodput * per_s);
        p99.points.emplace_back(t, to_millis(s.p99));
        maxl.points.emplace_back(t, to_millis(s.max));
        cold.points.emplace_back(t, s.offered ? static_cast<double>(s.cold_starts) / s.offered : 0.0);
    }
    save("throughput.svg", svg_line_chart("Offered load and goodput", "time (s)", "requests/s",
                                          {offered, goodput}));
    save("latency.svg", svg_line_chart("Latency", "time (s)", "ms", {p99, maxl}));
    save("cold_starts.svg", svg_line_chart("Cold starts", "time (s)", "fraction", {cold}));
    save("prediction_error.svg",
         svg_line_chart("Infer prediction error CDF", "error (us)", "CDF",
                        {cdf_series("overprediction", report.infer_over, 1e-3),
                         cdf_series("underprediction", report.infer_under, 1e-3)}));
    save("completion_error.svg",
         svg_line_chart("Infer completion error CDF", "error (us)", "CDF",
                        {cdf_series("overprediction", report.completion_over, 1e-3),
                         cdf_series("underprediction", report.completion_under, 1e-3)}));
    return written;
}

}  // namespace clockwork
