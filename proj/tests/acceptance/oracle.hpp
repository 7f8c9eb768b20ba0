#pragma once

// Reference models for small one-GPU instances: a tick-based re-statement
// of the dispatch rules, and an exhaustive enumerator of feasible schedules.
// Neither shares code with the scheduler.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "clockwork/time.hpp"

namespace clockwork::oracle {

struct Model {
    std::vector<unsigned> batch_sizes;
    std::vector<Duration> exec;  // parallel to batch_sizes
    Duration load = 0;
    Duration input = 0;   // per request
    Duration output = 0;  // per request
    std::uint32_t pages = 1;

    Duration exec_for(unsigned b) const {
        for (std::size_t i = 0; i < batch_sizes.size(); i++) {
            if (batch_sizes[i] == b) return exec[i];
        }
        return kNever;
    }
    Duration margin(Duration tardy) const { return batch_sizes.back() * output + tardy; }
};

struct Request {
    int id;
    int model;
    TimePoint arrival;
    Duration slo;
};

struct Instance {
    std::string name;
    std::vector<Model> models;
    std::vector<Request> requests;  // ids 1..n in submission order
    std::uint32_t pages = 2;
    Duration horizon = millis(5);
    Duration tardy = millis(1);
    Duration lead = millis(1);
    // Requests the enumerator considers; earlier ones only warm the GPU.
    int first_measured = 1;
};

enum class Kind { Load, Unload, Infer };

struct Step {
    Kind kind;
    int model;
    std::vector<int> ids;  // Infer only
    TimePoint at = 0;
    bool same_decision(const Step& o) const { return kind == o.kind && model == o.model && ids == o.ids; }
};

inline std::string describe(const Step& s) {
    std::string out = s.kind == Kind::Load ? "Load" : s.kind == Kind::Unload ? "Unload" : "Infer";
    out += "(m" + std::to_string(s.model);
    if (s.kind == Kind::Infer) {
        out += ",{";
        for (std::size_t i = 0; i < s.ids.size(); i++) out += (i ? "," : "") + std::to_string(s.ids[i]);
        out += "}";
    }
    return out + ")";
}

struct Outcome {
    std::vector<Step> steps;
    std::map<int, bool> served;  // measured requests
};

// ---------------------------------------------------------------- reference

class Reference {
public:
    explicit Reference(const Instance& inst) : inst_(inst) {
        models_.resize(inst.models.size());
        pages_free_ = inst.pages;
        for (auto& r : inst.requests) {
            Req q;
            q.spec = r;
            q.deadline = r.arrival + r.slo - inst.models[r.model].margin(inst.tardy);
            reqs_.push_back(q);
        }
    }

    Outcome run(Duration tick = micros(1)) {
        TimePoint end = 0;
        for (auto& r : inst_.requests) end = std::max(end, r.arrival + r.slo);
        end += seconds(1);
        for (TimePoint t = 0; t <= end; t += tick) {
            bool load_event = false;
            for (auto& [at, kind] : pending_results_) {
                (void)kind;
                if (at <= t && at > t - tick) load_event = true;
            }
            if (load_wake_ != kNever && t >= load_wake_) {
                load_wake_ = kNever;
                load_event = true;
            }
            for (auto& q : reqs_) {
                if (q.state == State::Future && q.spec.arrival <= t) arrive(q, t);
            }
            purge(t);
            expire_demand(t);
            if (load_event) decide_loads(t);
            decide_infers(t);
            if (load_event) decide_infers(t);
        }
        Outcome out;
        out.steps = steps_;
        for (auto& q : reqs_) {
            if (q.spec.id >= inst_.first_measured) out.served[q.spec.id] = q.state == State::Taken;
        }
        return out;
    }

private:
    enum class State { Future, Queued, Taken, Denied };
    struct Req {
        Request spec;
        TimePoint deadline = 0;
        State state = State::Future;
        bool in_demand = false;
        TimePoint benefit_until = 0;
    };
    struct ModelState {
        bool placed = false;
        TimePoint load_end = 0;
        TimePoint last_touch = 0;
        TimePoint last_loaded = 0;
        std::vector<TimePoint> infer_results;  // result arrival times
    };

    const Model& model(int m) const { return inst_.models[m]; }
    Duration input(int m, unsigned b) const { return b * model(m).input; }
    TimePoint infer_free(TimePoint t) const { return std::max(t, infer_free_); }
    TimePoint load_free(TimePoint t) const { return std::max(t, load_free_); }

    void arrive(Req& q, TimePoint t) {
        int m = q.spec.model;
        unsigned b1 = model(m).batch_sizes.front();
        TimePoint start = std::max(infer_free(t), t + input(m, b1));
        if (models_[m].placed) {
            start = std::max(start, models_[m].load_end);
        } else {
            start = std::max(start, load_free(t) + model(m).load);
        }
        if (start + model(m).exec_for(b1) + inst_.tardy > q.deadline) {
            q.state = State::Denied;
            return;
        }
        q.state = State::Queued;
        q.benefit_until = q.deadline - model(m).load - model(m).exec_for(b1) - inst_.tardy -
                          inst_.lead - input(m, b1);
        q.in_demand = q.benefit_until >= t;
        decide_infers(t);
        if (priority(m) > 0) decide_loads(t);
    }

    bool eligible(const Req& q, unsigned b, TimePoint t) const {
        int m = q.spec.model;
        return q.state == State::Queued &&
               q.deadline >= t + model(m).exec_for(b) + inst_.tardy + input(m, b);
    }

    // Queued requests of `m` still satisfiable at batch `b`, earliest deadline
    // first, arrival order among equals.
    std::vector<Req*> queue(int m, unsigned b, TimePoint t) {
        std::vector<Req*> out;
        for (auto& q : reqs_) {
            if (q.spec.model == m && eligible(q, b, t)) out.push_back(&q);
        }
        std::stable_sort(out.begin(), out.end(), [](Req* x, Req* y) { return x->deadline < y->deadline; });
        return out;
    }

    void purge(TimePoint t) {
        for (auto& q : reqs_) {
            if (q.state != State::Queued) continue;
            if (!eligible(q, model(q.spec.model).batch_sizes.front(), t)) q.state = State::Denied;
        }
    }

    void expire_demand(TimePoint t) {
        for (auto& q : reqs_) {
            if (q.in_demand && (q.state != State::Queued || q.benefit_until < t)) q.in_demand = false;
        }
    }

    double priority(int m) const {
        double demand = 0;
        for (auto& q : reqs_) {
            if (q.spec.model == m && q.state == State::Queued && q.in_demand) {
                demand += static_cast<double>(model(m).exec_for(model(m).batch_sizes.front()));
            }
        }
        return demand;  // only consulted for unplaced models
    }

    void decide_infers(TimePoint t) {
        std::set<std::pair<int, unsigned>> skipped;
        while (infer_free(t) - t < inst_.horizon) {
            // Candidate with the smallest latest start; larger batch, then
            // lower model, on ties.
            std::optional<std::tuple<TimePoint, int, int, unsigned>> best;
            for (int m = 0; m < static_cast<int>(models_.size()); m++) {
                if (!models_[m].placed) continue;
                for (unsigned b : model(m).batch_sizes) {
                    if (skipped.count({m, b})) continue;
                    auto q = queue(m, b, t);
                    if (q.size() < b) continue;
                    TimePoint latest = q.front()->deadline - model(m).exec_for(b) - inst_.tardy;
                    std::tuple<TimePoint, int, int, unsigned> key{latest, -static_cast<int>(b), m, b};
                    if (!best || key < *best) best = key;
                }
            }
            if (!best) return;
            auto [latest, neg_b, m, b] = *best;
            (void)latest;
            (void)neg_b;
            if (models_[m].load_end - t >= inst_.horizon) {
                skipped.insert({m, b});
                continue;
            }
            // Grow to the largest batch that still holds the head request
            // and finishes in time for it.
            Req* lead_request = queue(m, b, t).front();
            std::optional<unsigned> chosen;
            TimePoint start = 0;
            auto& sizes = model(m).batch_sizes;
            for (auto it = sizes.rbegin(); it != sizes.rend() && *it >= b; ++it) {
                auto q = queue(m, *it, t);
                if (q.size() < *it || q.front() != lead_request) continue;
                TimePoint s = std::max({infer_free(t), t + input(m, *it), models_[m].load_end});
                if (s + model(m).exec_for(*it) + inst_.tardy <= q.front()->deadline) {
                    chosen = *it;
                    start = s;
                    break;
                }
            }
            if (!chosen) {
                skipped.insert({m, b});
                continue;
            }
            auto q = queue(m, *chosen, t);
            Step step{Kind::Infer, m, {}, t};
            for (unsigned i = 0; i < *chosen; i++) {
                q[i]->state = State::Taken;
                q[i]->in_demand = false;
                step.ids.push_back(q[i]->spec.id);
            }
            steps_.push_back(step);
            Duration exec = model(m).exec_for(*chosen);
            infer_free_ = start + exec;
            TimePoint result = start + exec + *chosen * model(m).output;
            models_[m].infer_results.push_back(result);
            pending_results_.emplace_back(result, Kind::Infer);
            models_[m].last_touch = t;
            skipped.clear();
        }
    }

    bool idle(int m, TimePoint t) const {
        for (TimePoint r : models_[m].infer_results) {
            if (r > t) return false;
        }
        return true;
    }

    bool queue_empty(int m) const {
        for (auto& q : reqs_) {
            if (q.spec.model == m && q.state == State::Queued) return false;
        }
        return true;
    }

    void decide_loads(TimePoint t) {
        while (true) {
            if (load_free(t) - t >= inst_.horizon) {
                load_wake_ = load_free(t) - inst_.horizon + 1;
                return;
            }
            std::optional<int> candidate;
            double best = 0;
            for (int m = 0; m < static_cast<int>(models_.size()); m++) {
                if (models_[m].placed) continue;
                double p = priority(m);
                if (p <= 0) continue;
                bool better = !candidate || p > best ||
                              (p == best && models_[m].last_loaded < models_[*candidate].last_loaded);
                if (better) {
                    candidate = m;
                    best = p;
                }
            }
            if (!candidate) return;
            int m = *candidate;
            if (model(m).pages > inst_.pages) return;
            std::vector<int> victims;
            if (pages_free_ < model(m).pages) {
                std::vector<int> lru;
                for (int v = 0; v < static_cast<int>(models_.size()); v++) {
                    if (models_[v].placed) lru.push_back(v);
                }
                std::stable_sort(lru.begin(), lru.end(), [&](int a, int b) {
                    return models_[a].last_touch < models_[b].last_touch;
                });
                std::uint32_t reclaimed = 0;
                for (int v : lru) {
                    if (pages_free_ + reclaimed >= model(m).pages) break;
                    if (t >= models_[v].load_end && queue_empty(v) && idle(v, t)) {
                        victims.push_back(v);
                        reclaimed += model(v).pages;
                    }
                }
                if (pages_free_ + reclaimed < model(m).pages) return;
            }
            for (int v : victims) {
                models_[v].placed = false;
                pages_free_ += model(v).pages;
                steps_.push_back({Kind::Unload, v, {}, t});
            }
            TimePoint start = load_free(t);
            load_free_ = start + model(m).load;
            pages_free_ -= model(m).pages;
            models_[m].placed = true;
            models_[m].load_end = load_free_;
            models_[m].last_touch = t;
            models_[m].last_loaded = t;
            pending_results_.emplace_back(load_free_, Kind::Load);
            steps_.push_back({Kind::Load, m, {}, t});
            decide_infers(t);
        }
    }

    const Instance& inst_;
    std::vector<Req> reqs_;
    std::vector<ModelState> models_;
    std::uint32_t pages_free_ = 0;
    TimePoint infer_free_ = 0;
    TimePoint load_free_ = 0;
    TimePoint load_wake_ = kNever;
    std::vector<std::pair<TimePoint, Kind>> pending_results_;
    std::vector<Step> steps_;
};

// -------------------------------------------------------------- enumeration

// A schedule is an ordered list of Infer batches over the measured requests.
// Timing is as-soon-as-possible on one GPU: each batch starts once the GPU is
// free, its inputs are copied, and its model is resident. With `pages` too
// small for every model, switching models means loading after the previous
// model's last batch has returned.
struct Enumeration {
    std::vector<std::vector<Step>> feasible;
    std::size_t max_served = 0;
};

inline Enumeration enumerate(const Instance& inst, const std::vector<TimePoint>& resident_at) {
    std::vector<Request> reqs;
    for (auto& r : inst.requests) {
        if (r.id >= inst.first_measured) reqs.push_back(r);
    }
    std::uint32_t all_pages = 0;
    for (auto& m : inst.models) all_pages += m.pages;
    bool swapping = all_pages > inst.pages;

    Enumeration out;
    std::vector<Step> current;
    std::vector<bool> used(reqs.size(), false);

    struct Gpu {
        TimePoint exec_free = 0;
        TimePoint load_free = 0;
        int resident = -1;
        TimePoint resident_from = 0;
        TimePoint last_result = 0;
    };

    std::function<void(Gpu, std::size_t)> rec = [&](Gpu gpu, std::size_t served) {
        out.feasible.push_back(current);
        out.max_served = std::max(out.max_served, served);
        std::size_t n = reqs.size();
        for (std::uint32_t mask = 1; mask < (1u << n); mask++) {
            bool ok = true;
            int m = -1;
            std::vector<int> ids;
            TimePoint ready = 0;
            for (std::size_t i = 0; i < n && ok; i++) {
                if (!(mask & (1u << i))) continue;
                if (used[i] || (m >= 0 && reqs[i].model != m)) ok = false;
                m = reqs[i].model;
                ids.push_back(reqs[i].id);
                ready = std::max(ready, reqs[i].arrival);
            }
            if (!ok) continue;
            auto& model = inst.models[m];
            unsigned b = static_cast<unsigned>(ids.size());
            if (model.exec_for(b) == kNever) continue;
            Gpu next = gpu;
            TimePoint available;
            if (!swapping) {
                available = resident_at[m];
            } else if (gpu.resident == m) {
                available = gpu.resident_from;
            } else {
                TimePoint first_arrival = kNever;
                for (auto& r : reqs) {
                    if (r.model == m) first_arrival = std::min(first_arrival, r.arrival);
                }
                TimePoint load_start = std::max({gpu.load_free, gpu.last_result, first_arrival});
                available = load_start + model.load;
                next.load_free = available;
                next.resident = m;
                next.resident_from = available;
            }
            TimePoint start = std::max({gpu.exec_free, ready + b * model.input, available});
            TimePoint end = start + model.exec_for(b);
            for (std::size_t i = 0; i < n && ok; i++) {
                if (!(mask & (1u << i))) continue;
                TimePoint deadline = reqs[i].arrival + reqs[i].slo - model.margin(inst.tardy);
                if (end + inst.tardy > deadline) ok = false;
            }
            if (!ok) continue;
            next.exec_free = end;
            next.last_result = end + b * model.output;
            std::sort(ids.begin(), ids.end());
            current.push_back({Kind::Infer, m, ids, start});
            for (std::size_t i = 0; i < n; i++) {
                if (mask & (1u << i)) used[i] = true;
            }
            rec(next, served + b);
            for (std::size_t i = 0; i < n; i++) {
                if (mask & (1u << i)) used[i] = false;
            }
            current.pop_back();
        }
    };
    rec(Gpu{}, 0);
    return out;
}

// Infer steps of `steps` restricted to measured requests, ids sorted.
inline std::vector<Step> measured_infers(const Instance& inst, const std::vector<Step>& steps) {
    std::vector<Step> out;
    for (auto& s : steps) {
        if (s.kind != Kind::Infer) continue;
        if (s.ids.empty() || s.ids.front() < inst.first_measured) continue;
        Step copy = s;
        std::sort(copy.ids.begin(), copy.ids.end());
        out.push_back(copy);
    }
    return out;
}

inline bool contains(const Enumeration& e, const std::vector<Step>& schedule) {
    for (auto& f : e.feasible) {
        if (f.size() != schedule.size()) continue;
        bool same = true;
        for (std::size_t i = 0; i < f.size() && same; i++) same = f[i].same_decision(schedule[i]);
        if (same) return true;
    }
    return false;
}

}  // namespace clockwork::oracle
