#include "clockwork/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace clockwork {

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

Duration seconds_f(double s) {
    return static_cast<Duration>(std::llround(s * 1e9));
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        auto next = s.find(sep, pos);
        out.push_back(s.substr(pos, next == std::string_view::npos ? s.npos : next - pos));
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    return out;
}

template <typename T>
T parse_int(std::string_view text, const std::string& what) {
    T value{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw WorkloadError("invalid " + what + " '" + std::string(text) + "'");
    }
    return value;
}

double parse_double(std::string_view text, const std::string& what) {
    try {
        std::size_t used = 0;
        std::string s(text);
        double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(what);
        return v;
    } catch (const std::exception&) {
        throw WorkloadError("invalid " + what + " '" + std::string(text) + "'");
    }
}

}  // namespace

PoissonArrivals::PoissonArrivals(double rate_per_s, std::uint64_t seed, TimePoint start)
    : rate_(rate_per_s), last_(start), rng_(make_rng(seed, 0x5eed)) {
    if (!(rate_per_s > 0) || !std::isfinite(rate_per_s)) {
        throw std::invalid_argument("Poisson rate must be > 0");
    }
}

TimePoint PoissonArrivals::next() {
    double gap_ns = gap_(rng_) / rate_ * 1e9;
    auto gap = std::max<Duration>(1, static_cast<Duration>(std::llround(gap_ns)));
    last_ += gap;
    return last_;
}

void PoissonArrivals::set_rate(double rate_per_s, TimePoint from) {
    if (!(rate_per_s > 0) || !std::isfinite(rate_per_s)) {
        throw std::invalid_argument("Poisson rate must be > 0");
    }
    rate_ = rate_per_s;
    last_ = std::max(last_, from);
}

std::vector<TimePoint> gen_open_loop(double rate_per_s, std::uint64_t seed, Duration horizon,
                                     TimePoint start) {
    PoissonArrivals arrivals(rate_per_s, seed, start);
    std::vector<TimePoint> out;
    out.reserve(static_cast<std::size_t>(rate_per_s * to_seconds(horizon) * 1.1) + 16);
    for (TimePoint t = arrivals.next(); t < start + horizon; t = arrivals.next()) out.push_back(t);
    return out;
}

// ------------------------------------------------------------------ traces

std::uint32_t InvocationTrace::minutes() const {
    std::uint32_t n = 0;
    for (auto& r : rows) n = std::max(n, r.minute + 1);
    return n;
}

std::vector<std::uint32_t> InvocationTrace::workloads() const {
    std::set<std::uint32_t> ids;
    for (auto& r : rows) ids.insert(r.workload);
    return {ids.begin(), ids.end()};
}

std::uint64_t InvocationTrace::total() const {
    std::uint64_t n = 0;
    for (auto& r : rows) n += r.count;
    return n;
}

std::vector<std::uint64_t> InvocationTrace::per_minute() const {
    std::vector<std::uint64_t> out(minutes(), 0);
    for (auto& r : rows) out[r.minute] += r.count;
    return out;
}

InvocationTrace parse_trace(std::string_view csv, std::string_view source) {
    InvocationTrace trace;
    std::size_t line_no = 0;
    bool header_seen = false;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        auto end = csv.find('\n', pos);
        auto line = trim(csv.substr(pos, end == std::string_view::npos ? csv.npos : end - pos));
        pos = end == std::string_view::npos ? csv.size() + 1 : end + 1;
        line_no++;
        if (line.empty()) continue;
        auto where = std::string(source) + ":" + std::to_string(line_no);
        if (!header_seen) {
            if (line != "workload_id,minute,count") {
                throw WorkloadError(where + ": expected header workload_id,minute,count");
            }
            header_seen = true;
            continue;
        }
        auto fields = split(line, ',');
        if (fields.size() != 3) throw WorkloadError(where + ": expected 3 fields");
        TraceRow row;
        row.workload = parse_int<std::uint32_t>(trim(fields[0]), where + " workload_id");
        row.minute = parse_int<std::uint32_t>(trim(fields[1]), where + " minute");
        row.count = parse_int<std::uint64_t>(trim(fields[2]), where + " count");
        trace.rows.push_back(row);
    }
    if (!header_seen) throw WorkloadError(std::string(source) + ": empty trace");
    return trace;
}

InvocationTrace load_trace(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WorkloadError("cannot open trace " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_trace(buf.str(), path.string());
}

std::string format_trace(const InvocationTrace& trace) {
    std::string out = "workload_id,minute,count\n";
    for (auto& r : trace.rows) {
        out += std::to_string(r.workload) + "," + std::to_string(r.minute) + "," +
               std::to_string(r.count) + "\n";
    }
    return out;
}

void save_trace(const InvocationTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw WorkloadError("cannot write trace " + path.string());
    out << format_trace(trace);
}

SyntheticTrace synthesize_maf_trace(const SyntheticTraceSpec& spec) {
    if (spec.heavy_fraction + spec.bursty_fraction + spec.periodic_fraction > 1.0) {
        throw std::invalid_argument("class fractions exceed 1");
    }
    auto rng = make_rng(spec.seed, 0x7ace);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::lognormal_distribution<double> level(0.0, 0.5);
    auto poisson = [&](double mean) -> std::uint64_t {
        if (mean <= 0) return 0;
        return std::poisson_distribution<std::uint64_t>(mean)(rng);
    };
    const std::uint32_t periods[] = {5, 15, 60};

    SyntheticTrace out;
    out.classes.resize(spec.workloads);
    out.periods.assign(spec.workloads, 0);
    out.trace.rows.reserve(static_cast<std::size_t>(spec.workloads) * spec.minutes);
    for (std::uint32_t w = 0; w < spec.workloads; w++) {
        double u = unit(rng);
        WorkloadClass cls = WorkloadClass::Cold;
        if (u < spec.heavy_fraction) {
            cls = WorkloadClass::Heavy;
        } else if (u < spec.heavy_fraction + spec.bursty_fraction) {
            cls = WorkloadClass::Bursty;
        } else if (u < spec.heavy_fraction + spec.bursty_fraction + spec.periodic_fraction) {
            cls = WorkloadClass::Periodic;
            out.periods[w] = periods[std::uniform_int_distribution<int>(0, 2)(rng)];
        }
        out.classes[w] = cls;
        double base = level(rng);
        int burst_left = 0;
        for (std::uint32_t minute = 0; minute < spec.minutes; minute++) {
            double mean = spec.cold_per_minute * base;
            switch (cls) {
                case WorkloadClass::Heavy:
                    mean = spec.heavy_per_minute * base *
                           (1.0 + 0.2 * std::sin(2 * M_PI * minute / 1440.0 + w));
                    break;
                case WorkloadClass::Bursty:
                    if (burst_left == 0 && unit(rng) < 0.03) {
                        burst_left = std::uniform_int_distribution<int>(1, 5)(rng);
                    }
                    if (burst_left > 0) {
                        mean = 0.5 * spec.heavy_per_minute * base;
                        burst_left--;
                    }
                    break;
                case WorkloadClass::Periodic:
                    if (minute % out.periods[w] == 0) mean = 0.5 * spec.heavy_per_minute * base;
                    break;
                case WorkloadClass::Cold:
                    break;
            }
            out.trace.rows.push_back(TraceRow{w, minute, poisson(mean)});
        }
    }
    return out;
}

std::vector<Arrival> replay_trace(const InvocationTrace& trace,
                                  const std::unordered_map<std::uint32_t, ModelId>& mapping,
                                  double scale, std::uint64_t seed, TimePoint start,
                                  Duration minute,
                                  const std::function<double(std::uint32_t)>& scale_at) {
    if (!(scale > 0) && !scale_at) throw std::invalid_argument("replay scale must be > 0");
    if (minute <= 0) throw std::invalid_argument("minute length must be > 0");
    auto rng = make_rng(seed, 0x4e91a7);
    std::uniform_int_distribution<Duration> offset(0, minute - 1);
    std::vector<Arrival> out;
    for (auto& row : trace.rows) {
        auto it = mapping.find(row.workload);
        if (it == mapping.end()) {
            throw WorkloadError("trace workload " + std::to_string(row.workload) + " is unmapped");
        }
        double s = scale_at ? scale_at(row.minute) : scale;
        if (!(s >= 0)) throw std::invalid_argument("replay scale must be >= 0");
        double whole = std::floor(s);
        double frac = s - whole;
        std::uint64_t n = static_cast<std::uint64_t>(whole) * row.count;
        if (frac > 0 && row.count > 0) {
            n += std::binomial_distribution<std::uint64_t>(row.count, frac)(rng);
        }
        TimePoint base = start + static_cast<Duration>(row.minute) * minute;
        for (std::uint64_t i = 0; i < n; i++) out.push_back(Arrival{base + offset(rng), it->second});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Arrival& a, const Arrival& b) { return a.time < b.time; });
    return out;
}

std::unordered_map<std::uint32_t, ModelId> round_robin_mapping(const InvocationTrace& trace,
                                                               const std::vector<ModelId>& models) {
    if (models.empty()) throw std::invalid_argument("mapping needs at least one model");
    std::unordered_map<std::uint32_t, ModelId> out;
    std::size_t i = 0;
    for (auto w : trace.workloads()) out[w] = models[i++ % models.size()];
    return out;
}

// ------------------------------------------------------------------- specs

Duration ClientGroup::slo_at(TimePoint t) const {
    if (sweep_step <= 0) return slo;
    auto k = std::max<Duration>(0, (t - start) / sweep_step);
    double value = static_cast<double>(sweep_from);
    for (Duration i = 0; i < k; i++) {
        double next = value * sweep_factor;
        if (next > static_cast<double>(sweep_to) * 1.01) break;
        value = next;
    }
    return static_cast<Duration>(std::llround(value));
}

double ClientGroup::rate_at(TimePoint t) const {
    if (step <= 0 || rate_step == 0) return rate;
    auto k = std::max<Duration>(0, (t - start) / step);
    return rate + static_cast<double>(k) * rate_step;
}

std::size_t ClientGroup::active_models(TimePoint t) const {
    if (activate_every <= 0) return models.size();
    auto k = std::max<Duration>(0, (t - start) / activate_every);
    return std::min<std::size_t>(models.size(), static_cast<std::size_t>(k) + 1);
}

std::vector<ModelId> parse_model_list(std::string_view text) {
    std::vector<ModelId> out;
    for (auto part : split(text, ',')) {
        part = trim(part);
        if (part.empty()) throw WorkloadError("empty entry in model list");
        auto dash = part.find('-');
        if (dash == std::string_view::npos) {
            out.push_back(parse_int<ModelId>(part, "model id"));
            continue;
        }
        auto lo = parse_int<ModelId>(part.substr(0, dash), "model range");
        auto hi = parse_int<ModelId>(part.substr(dash + 1), "model range");
        if (hi < lo) throw WorkloadError("descending model range '" + std::string(part) + "'");
        for (ModelId m = lo; m <= hi; m++) out.push_back(m);
    }
    return out;
}

WorkloadSpec parse_workload(std::string_view text, const std::filesystem::path& base_dir,
                            std::string_view source) {
    WorkloadSpec spec;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        line_no++;
        auto hash = raw.find('#');
        if (hash != std::string::npos) raw.resize(hash);
        std::istringstream words(raw);
        std::vector<std::string> tokens;
        for (std::string w; words >> w;) tokens.push_back(w);
        if (tokens.empty()) continue;
        auto where = std::string(source) + ":" + std::to_string(line_no) + ": ";
        try {
            if (tokens[0] == "seed" && tokens.size() == 2) {
                spec.seed = parse_int<std::uint64_t>(tokens[1], "seed");
            } else if (tokens[0] == "duration_s" && tokens.size() == 2) {
                spec.duration = seconds_f(parse_double(tokens[1], "duration_s"));
            } else if (tokens[0] == "group") {
                ClientGroup g;
                bool have_kind = false;
                bool have_models = false;
                for (std::size_t i = 1; i < tokens.size(); i++) {
                    auto eq = tokens[i].find('=');
                    if (eq == std::string::npos) throw WorkloadError("expected key=value");
                    std::string key = tokens[i].substr(0, eq);
                    std::string value = tokens[i].substr(eq + 1);
                    if (key == "kind") {
                        have_kind = true;
                        if (value == "open") {
                            g.kind = ClientGroup::Kind::Open;
                        } else if (value == "closed") {
                            g.kind = ClientGroup::Kind::Closed;
                        } else if (value == "trace") {
                            g.kind = ClientGroup::Kind::Trace;
                        } else {
                            throw WorkloadError("unknown kind '" + value + "'");
                        }
                    } else if (key == "models") {
                        g.models = parse_model_list(value);
                        have_models = true;
                    } else if (key == "name") {
                        g.name = value;
                    } else if (key == "slo_ms") {
                        g.slo = millis_f(parse_double(value, key));
                    } else if (key == "start_s") {
                        g.start = seconds_f(parse_double(value, key));
                    } else if (key == "end_s") {
                        g.end = seconds_f(parse_double(value, key));
                    } else if (key == "rate") {
                        g.rate = parse_double(value, key);
                    } else if (key == "rate_step") {
                        g.rate_step = parse_double(value, key);
                    } else if (key == "step_s") {
                        g.step = seconds_f(parse_double(value, key));
                    } else if (key == "activate_every_s") {
                        g.activate_every = seconds_f(parse_double(value, key));
                    } else if (key == "concurrency") {
                        g.concurrency = parse_int<unsigned>(value, key);
                    } else if (key == "slo_sweep") {
                        auto parts = split(value, ':');
                        if (parts.size() != 4) throw WorkloadError("slo_sweep needs 4 fields");
                        g.sweep_from = millis_f(parse_double(parts[0], "sweep from"));
                        g.sweep_to = millis_f(parse_double(parts[1], "sweep to"));
                        g.sweep_factor = parse_double(parts[2], "sweep factor");
                        g.sweep_step = seconds_f(parse_double(parts[3], "sweep step"));
                        g.slo = g.sweep_from;
                    } else if (key == "trace") {
                        std::filesystem::path p(value);
                        g.trace_path = (p.is_relative() ? base_dir / p : p).string();
                    } else if (key == "synthetic") {
                        auto parts = split(value, ':');
                        if (parts.size() != 3) throw WorkloadError("synthetic needs 3 fields");
                        g.use_synthetic = true;
                        g.synthetic.workloads = parse_int<std::uint32_t>(parts[0], "workloads");
                        g.synthetic.minutes = parse_int<std::uint32_t>(parts[1], "minutes");
                        g.synthetic.seed = parse_int<std::uint64_t>(parts[2], "seed");
                    } else if (key == "heavy_per_minute") {
                        g.synthetic.heavy_per_minute = parse_double(value, key);
                    } else if (key == "scale") {
                        g.scale = parse_double(value, key);
                    } else if (key == "scale_step") {
                        g.scale_step = parse_double(value, key);
                    } else if (key == "minute_s") {
                        g.minute = seconds_f(parse_double(value, key));
                    } else {
                        throw WorkloadError("unknown group key '" + key + "'");
                    }
                }
                if (!have_kind) throw WorkloadError("group needs kind=");
                if (!have_models || g.models.empty()) throw WorkloadError("group needs models=");
                if (g.slo <= 0) throw WorkloadError("slo must be > 0");
                if (g.kind == ClientGroup::Kind::Open && !(g.rate > 0)) {
                    throw WorkloadError("open group needs rate > 0");
                }
                if (g.kind == ClientGroup::Kind::Closed && g.concurrency < 1) {
                    throw WorkloadError("concurrency must be >= 1");
                }
                if (g.kind == ClientGroup::Kind::Trace) {
                    if (g.trace_path.empty() && !g.use_synthetic) {
                        throw WorkloadError("trace group needs trace= or synthetic=");
                    }
                    if (!(g.scale > 0)) throw WorkloadError("scale must be > 0");
                    if (g.minute <= 0) throw WorkloadError("minute_s must be > 0");
                }
                if (g.sweep_step > 0 && !(g.sweep_factor > 1.0)) {
                    throw WorkloadError("slo_sweep factor must be > 1");
                }
                if ((g.rate_step != 0 || g.scale_step != 0) && g.step <= 0) {
                    throw WorkloadError("rate_step/scale_step need step_s > 0");
                }
                spec.groups.push_back(std::move(g));
            } else {
                throw WorkloadError("unknown directive '" + tokens[0] + "'");
            }
        } catch (const WorkloadError& e) {
            throw WorkloadError(where + e.what());
        }
    }
    if (spec.duration <= 0) throw WorkloadError(std::string(source) + ": duration must be > 0");
    return spec;
}

WorkloadSpec load_workload(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WorkloadError("cannot open workload " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_workload(buf.str(), path.parent_path(), path.string());
}

void scale_workload(WorkloadSpec& spec, double factor) {
    if (!(factor > 0)) throw WorkloadError("scale factor must be > 0");
    for (auto& g : spec.groups) {
        if (g.kind == ClientGroup::Kind::Open) {
            g.rate *= factor;
            g.rate_step *= factor;
        } else if (g.kind == ClientGroup::Kind::Trace) {
            g.scale *= factor;
            g.scale_step *= factor;
        }
    }
}

// ------------------------------------------------------------------ driver

WorkloadDriver::WorkloadDriver(Runtime& runtime, WorkloadSpec spec, Submit submit,
                               const std::filesystem::path& base_dir)
    : runtime_(runtime),
      spec_(std::move(spec)),
      submit_(std::move(submit)),
      base_dir_(base_dir),
      open_(spec_.groups.size()),
      trace_(spec_.groups.size()),
      alive_(std::make_shared<bool>(true)) {}

WorkloadDriver::~WorkloadDriver() {
    *alive_ = false;
}

TimePoint WorkloadDriver::group_end(const ClientGroup& group) const {
    TimePoint end = origin_ + spec_.duration;
    if (group.end != kNever) end = std::min(end, origin_ + group.end);
    return end;
}

void WorkloadDriver::start(TimePoint origin) {
    origin_ = origin;
    std::weak_ptr<bool> alive = alive_;
    for (std::size_t g = 0; g < spec_.groups.size(); g++) {
        auto& group = spec_.groups[g];
        TimePoint begin = origin_ + group.start;
        switch (group.kind) {
            case ClientGroup::Kind::Open: {
                auto& st = open_[g];
                st.arrivals = std::make_unique<PoissonArrivals>(
                    group.rate_at(group.start), spec_.seed * 1000003 + g, begin);
                st.pick = make_rng(spec_.seed, 0x9000 + g);
                schedule_open(g);
                break;
            }
            case ClientGroup::Kind::Closed:
                runtime_.at(begin, [this, g, alive] {
                    if (alive.expired()) return;
                    for (ModelId m : spec_.groups[g].models) {
                        for (unsigned c = 0; c < spec_.groups[g].concurrency; c++) issue(g, m);
                    }
                });
                break;
            case ClientGroup::Kind::Trace: {
                InvocationTrace trace;
                if (group.use_synthetic) {
                    trace = synthesize_maf_trace(group.synthetic).trace;
                } else {
                    trace = load_trace(group.trace_path);
                }
                auto mapping = round_robin_mapping(trace, group.models);
                auto scale_at = [&group](std::uint32_t minute) {
                    if (group.scale_step == 0) return group.scale;
                    TimePoint t = group.start + static_cast<Duration>(minute) * group.minute;
                    auto k = (t - group.start) / group.step;
                    return group.scale + static_cast<double>(k) * group.scale_step;
                };
                auto arrivals = replay_trace(trace, mapping, group.scale, spec_.seed * 7919 + g,
                                             begin, group.minute, scale_at);
                TimePoint end = group_end(group);
                std::erase_if(arrivals, [end](const Arrival& a) { return a.time >= end; });
                trace_[g].arrivals = std::move(arrivals);
                schedule_trace(g);
                break;
            }
        }
    }
}

void WorkloadDriver::schedule_open(std::size_t g) {
    auto& group = spec_.groups[g];
    auto& st = open_[g];
    TimePoint t = st.arrivals->next();
    if (group.step > 0 && group.rate_step != 0) {
        // Restart the memoryless process at each rate boundary crossed.
        while (true) {
            TimePoint rel = t - origin_ - group.start;
            double want = group.rate_at(t - origin_);
            if (want == st.arrivals->rate()) break;
            TimePoint boundary = origin_ + group.start + (rel / group.step) * group.step;
            if (!(want > 0)) return;
            st.arrivals->set_rate(want, boundary);
            t = st.arrivals->next();
        }
    }
    if (t >= group_end(group)) return;
    st.next = t;
    std::weak_ptr<bool> alive = alive_;
    runtime_.at(t, [this, g, alive] {
        if (alive.expired()) return;
        auto& group = spec_.groups[g];
        auto& st = open_[g];
        TimePoint rel = runtime_.now() - origin_;
        std::size_t active = group.active_models(rel);
        std::uniform_int_distribution<std::size_t> pick(0, active - 1);
        issue(g, group.models[pick(st.pick)]);
        schedule_open(g);
    });
}

void WorkloadDriver::schedule_trace(std::size_t g) {
    auto& st = trace_[g];
    if (st.next >= st.arrivals.size()) return;
    std::weak_ptr<bool> alive = alive_;
    runtime_.at(st.arrivals[st.next].time, [this, g, alive] {
        if (alive.expired()) return;
        auto& st = trace_[g];
        TimePoint now = runtime_.now();
        // Issue every arrival due now in one event.
        while (st.next < st.arrivals.size() && st.arrivals[st.next].time <= now) {
            issue(g, st.arrivals[st.next].model);
            st.next++;
        }
        schedule_trace(g);
    });
}

void WorkloadDriver::issue(std::size_t g, ModelId model) {
    auto& group = spec_.groups[g];
    TimePoint now = runtime_.now();
    InferenceRequest req;
    req.id = next_id_++;
    req.model_id = model;
    req.slo = group.slo_at(now - origin_);
    req.arrival = now;
    if (group.kind == ClientGroup::Kind::Closed) {
        closed_outstanding_.emplace(req.id, std::make_pair(static_cast<std::uint32_t>(g), model));
    }
    submitted_++;
    submit_(req);
}

void WorkloadDriver::on_response(const InferenceResponse& response) {
    auto it = closed_outstanding_.find(response.id);
    if (it == closed_outstanding_.end()) return;
    auto [g, model] = it->second;
    closed_outstanding_.erase(it);
    std::weak_ptr<bool> alive = alive_;
    // Reissue from a fresh event so the caller is never re-entered.
    runtime_.at(runtime_.now(), [this, g = g, model = model, alive] {
        if (alive.expired()) return;
        if (runtime_.now() >= group_end(spec_.groups[g])) return;
        issue(g, model);
    });
}

}  // namespace clockwork
