#include "clockwork/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace clockwork {

std::vector<double> allocate_demand(double demand, const std::vector<double>& other_load,
                                    double epsilon) {
    double weight_sum = 0;
    for (double l : other_load) weight_sum += 1.0 / std::max(epsilon, l);
    std::vector<double> shares;
    shares.reserve(other_load.size());
    for (double l : other_load) shares.push_back(demand * (1.0 / std::max(epsilon, l)) / weight_sum);
    return shares;
}

double load_priority(double demand, const std::vector<double>& alloc,
                     const std::vector<double>& gpu_load, double capacity, double epsilon) {
    double covered = 0;
    for (std::size_t i = 0; i < alloc.size(); i++) {
        covered += alloc[i] * capacity / std::max(epsilon, gpu_load[i]);
    }
    return demand - covered;
}

Scheduler::Scheduler(Runtime& runtime, std::shared_ptr<const ModelCatalog> catalog,
                     SchedulerConfig config, ActionSink actions, ResponseSink responses)
    : runtime_(runtime),
      catalog_(std::move(catalog)),
      config_(config),
      send_action_(std::move(actions)),
      send_response_(std::move(responses)),
      models_(catalog_->size()),
      placed_on_(catalog_->size()),
      alive_(std::make_shared<bool>(true)) {
    if (config_.work_horizon <= 0) throw std::invalid_argument("work_horizon must be > 0");
    if (config_.capacity_horizon <= 0) throw std::invalid_argument("capacity_horizon must be > 0");
    if (config_.slack.lead < 0 || config_.slack.tardy < 0) {
        throw std::invalid_argument("slack must be >= 0");
    }
    for (ModelId m = 0; m < models_.size(); m++) {
        auto& profile = catalog_->profile(m);
        if (profile.batch_sizes.size() > 8) {
            throw std::invalid_argument("at most 8 batch sizes per model are supported");
        }
        models_[m].queues.resize(profile.batch_sizes.size());
        priority_order_.insert({0.0, 1, -static_cast<std::int64_t>(m)});
    }
}

Scheduler::~Scheduler() {
    *alive_ = false;
}

unsigned Scheduler::add_worker(const WorkerHandshake& handshake) {
    if (handshake.pages_total.size() != handshake.gpu_count) {
        throw std::invalid_argument("handshake pages_total must list every GPU");
    }
    WorkerState w;
    w.estimators = std::make_unique<WorkerEstimators>(catalog_, config_.estimator_window);
    auto index = static_cast<unsigned>(workers_.size());
    for (unsigned local = 0; local < handshake.gpu_count; local++) {
        GpuState g;
        g.worker = index;
        g.local = local;
        g.memory = MemoryMirror(handshake.pages_total[local]);
        w.gpus.push_back(static_cast<unsigned>(gpus_.size()));
        gpus_.push_back(std::move(g));
    }
    workers_.push_back(std::move(w));
    return index;
}

const MemoryMirror& Scheduler::memory(unsigned gpu) const {
    return gpus_.at(gpu).memory;
}
const ExecutorTimeline& Scheduler::infer_timeline(unsigned gpu) const {
    return gpus_.at(gpu).infer;
}
const ExecutorTimeline& Scheduler::load_timeline(unsigned gpu) const {
    return gpus_.at(gpu).load;
}
Duration Scheduler::predict_infer(unsigned gpu, ModelId model, unsigned batch_size) const {
    return predict(gpu, model, batch_size);
}
double Scheduler::gpu_load(unsigned gpu) const {
    return gpus_.at(gpu).load_sum;
}
std::size_t Scheduler::queued_requests(ModelId model) const {
    return models_.at(model).queued;
}

ModelLoadStats Scheduler::load_stats(ModelId model) const {
    auto& ms = models_.at(model);
    return {ms.demand, ms.priority, ms.alloc};
}

Duration Scheduler::output_margin(ModelId model) const {
    auto& profile = catalog_->profile(model);
    return static_cast<Duration>(profile.max_batch()) * profile.output_transfer +
           config_.slack.tardy;
}

Duration Scheduler::predict(unsigned gpu, ModelId m, unsigned batch_size) const {
    return workers_[gpus_[gpu].worker].estimators->predict_infer(m, batch_size);
}

Duration Scheduler::predict_load_on(unsigned gpu, ModelId m) const {
    return workers_[gpus_[gpu].worker].estimators->predict_load(m);
}

Duration Scheduler::purge_estimate(ModelId m, unsigned batch_size) const {
    auto& on = placed_on_[m];
    if (on.empty()) {
        if (workers_.empty()) return seed_estimate(catalog_->profile(m), batch_size);
        return workers_[0].estimators->predict_infer(m, batch_size);
    }
    Duration best = kNever;
    for (unsigned g : on) best = std::min(best, predict(g, m, batch_size));
    return best;
}

Duration Scheduler::input_time(ModelId m, unsigned batch_size) const {
    return static_cast<Duration>(batch_size) * catalog_->profile(m).input_transfer;
}

TimePoint Scheduler::residency_effective(unsigned gpu, ModelId m) const {
    auto* r = gpus_[gpu].memory.residency(m);
    return r ? r->effective : kNever;
}

// ---------------------------------------------------------------- requests

Scheduler::Handle Scheduler::allocate(Request r) {
    Handle h;
    if (!free_handles_.empty()) {
        h = free_handles_.back();
        free_handles_.pop_back();
        r.gen = requests_[h].gen + 1;
        requests_[h] = std::move(r);
    } else {
        h = static_cast<Handle>(requests_.size());
        requests_.push_back(std::move(r));
    }
    live_requests_++;
    return h;
}

void Scheduler::release(Handle h) {
    auto& r = requests_[h];
    r.live = false;
    r.gen++;
    free_handles_.push_back(h);
    live_requests_--;
}

void Scheduler::respond(Handle h, ResponseStatus status, unsigned batch_size, TimePoint now) {
    auto& r = requests_[h];
    RequestOutcome out;
    out.response.id = r.req.id;
    out.response.status = status;
    out.response.latency = now - r.req.arrival;
    out.response.cold_start = r.cold;
    out.model_id = r.req.model_id;
    out.arrival = r.req.arrival;
    out.slo = r.req.slo;
    out.batch_size = status == ResponseStatus::Denied ? 0 : batch_size;
    release(h);
    if (send_response_) send_response_(out);
}

bool Scheduler::admissible(const Request& r, TimePoint now) const {
    ModelId m = r.req.model_id;
    auto& profile = catalog_->profile(m);
    unsigned b = profile.batch_sizes.front();
    Duration input = input_time(m, b);
    for (unsigned g = 0; g < gpus_.size(); g++) {
        auto& gs = gpus_[g];
        TimePoint start = std::max(gs.infer.free_at(now), now + input);
        if (auto* res = gs.memory.residency(m)) {
            start = std::max(start, res->effective);
        } else {
            start = std::max(start, gs.load.free_at(now) + predict_load_on(g, m));
        }
        if (start + predict(g, m, b) + config_.slack.tardy <= r.deadline) return true;
    }
    return false;
}

void Scheduler::on_request(InferenceRequest request) {
    if (!catalog_->contains(request.model_id)) {
        throw std::invalid_argument("request for unknown model " + std::to_string(request.model_id));
    }
    if (request.slo <= 0) throw std::invalid_argument("request SLO must be > 0");
    TimePoint now = runtime_.now();
    request.arrival = now;
    ModelId m = request.model_id;

    Request r;
    r.req = request;
    r.deadline = now + request.slo - output_margin(m);
    r.cold = true;
    for (unsigned g : placed_on_[m]) {
        if (residency_effective(g, m) <= now) r.cold = false;
    }
    Handle h = allocate(r);
    if (!admissible(requests_[h], now)) {
        respond(h, ResponseStatus::Denied, 0, now);
        return;
    }
    enqueue(h, now);
}

bool Scheduler::dead(const Slot& s, std::size_t bi) const {
    auto& r = requests_[s.handle];
    return r.gen != s.gen || !r.live || r.taken || (r.purged & (1u << bi)) != 0;
}

std::optional<Scheduler::Handle> Scheduler::head(ModelId m, std::size_t bi) const {
    for (auto& s : models_[m].queues[bi].order) {
        if (!dead(s, bi)) return s.handle;
    }
    return std::nullopt;
}

void Scheduler::enqueue(Handle h, TimePoint now) {
    auto& r = requests_[h];
    ModelId m = r.req.model_id;
    auto& ms = models_[m];
    auto& profile = catalog_->profile(m);
    // A fresh generation retires any slots left from an earlier queueing.
    r.gen++;
    r.live = true;
    r.taken = false;
    r.purged = 0;
    r.in_demand = false;
    Slot slot{h, r.gen};

    for (std::size_t bi = 0; bi < ms.queues.size(); bi++) {
        auto& q = ms.queues[bi];
        auto before = head(m, bi);
        auto it = q.order.end();
        while (it != q.order.begin()) {
            auto& prev = requests_[(it - 1)->handle];
            if ((it - 1)->gen == prev.gen && prev.deadline <= r.deadline) break;
            --it;
        }
        q.order.insert(it, slot);
        q.live++;
        bool head_changed = !before || *before != head(m, bi).value();
        if (head_changed || q.live == profile.batch_sizes[bi]) refresh_strategy(m, bi, now);
    }
    ms.queued++;
    demand_add(m, h, now);
    update_allocation(m);

    Duration p1 = purge_estimate(m, profile.batch_sizes.front());
    schedule_check(m, r.deadline - p1 - config_.slack.tardy -
                          input_time(m, profile.batch_sizes.front()) + 1);

    for (unsigned g : placed_on_[m]) fill_infer(g);
    if (ms.priority > 0) fill_loads_for(m);
}

void Scheduler::take(ModelId m, Handle h) {
    auto& r = requests_[h];
    auto& ms = models_[m];
    r.taken = true;
    for (std::size_t bi = 0; bi < ms.queues.size(); bi++) {
        if ((r.purged & (1u << bi)) == 0) ms.queues[bi].live--;
    }
    ms.queued--;
    demand_remove(m, h);
}

void Scheduler::purge(ModelId m, std::size_t bi, TimePoint now) {
    auto& ms = models_[m];
    auto& q = ms.queues[bi];
    unsigned b = catalog_->profile(m).batch_sizes[bi];
    TimePoint threshold = now + purge_estimate(m, b) + config_.slack.tardy + input_time(m, b);
    bool changed = false;
    while (!q.order.empty()) {
        Slot s = q.order.front();
        if (dead(s, bi)) {
            q.order.pop_front();
            continue;
        }
        auto& r = requests_[s.handle];
        if (r.deadline >= threshold) break;
        q.order.pop_front();
        r.purged |= static_cast<std::uint8_t>(1u << bi);
        q.live--;
        changed = true;
        if (bi == 0) {
            // Unsatisfiable even alone: drop from every queue and deny.
            for (std::size_t bj = 1; bj < ms.queues.size(); bj++) {
                if ((r.purged & (1u << bj)) == 0) {
                    r.purged |= static_cast<std::uint8_t>(1u << bj);
                    ms.queues[bj].live--;
                    refresh_strategy(m, bj, now);
                }
            }
            ms.queued--;
            demand_remove(m, s.handle);
            respond(s.handle, ResponseStatus::Denied, 0, now);
        }
    }
    if (changed) {
        refresh_strategy(m, bi, now);
        if (bi == 0) update_allocation(m);
    }
}

void Scheduler::purge_all(ModelId m, TimePoint now) {
    for (std::size_t bi = 0; bi < models_[m].queues.size(); bi++) purge(m, bi, now);
}

TimePoint Scheduler::strategy_latest(ModelId m, std::size_t bi, unsigned gpu) const {
    auto h = head(m, bi);
    if (!h) return kNever;
    unsigned b = catalog_->profile(m).batch_sizes[bi];
    return requests_[*h].deadline - predict(gpu, m, b) - config_.slack.tardy;
}

void Scheduler::push_strategy(unsigned gpu, ModelId m, std::size_t bi, TimePoint) {
    auto& q = models_[m].queues[bi];
    unsigned b = catalog_->profile(m).batch_sizes[bi];
    if (q.live < b) return;
    TimePoint latest = strategy_latest(m, bi, gpu);
    if (latest == kNever) return;
    gpus_[gpu].strategies.push(
        StrategyEntry{latest, b, m, static_cast<std::uint8_t>(bi), q.stamp});
}

void Scheduler::refresh_strategy(ModelId m, std::size_t bi, TimePoint now) {
    auto& q = models_[m].queues[bi];
    q.stamp++;
    for (unsigned g : placed_on_[m]) push_strategy(g, m, bi, now);
}

void Scheduler::push_all_strategies(unsigned gpu, ModelId m, TimePoint now) {
    for (std::size_t bi = 0; bi < models_[m].queues.size(); bi++) push_strategy(gpu, m, bi, now);
}

void Scheduler::schedule_check(ModelId m, TimePoint t) {
    auto& ms = models_[m];
    TimePoint now = runtime_.now();
    if (t < now) t = now;
    if (ms.next_check <= t && ms.next_check >= now) return;
    ms.next_check = t;
    std::weak_ptr<bool> alive = alive_;
    runtime_.at(t, [this, m, t, alive] {
        if (alive.expired() || !*alive.lock()) return;
        if (models_[m].next_check == t) models_[m].next_check = kNever;
        run_check(m);
    });
}

void Scheduler::run_check(ModelId m) {
    TimePoint now = runtime_.now();
    purge_all(m, now);
    expire_demand(m, now);

    auto& ms = models_[m];
    auto& profile = catalog_->profile(m);
    TimePoint next = kNever;
    if (auto h = head(m, 0)) {
        unsigned b = profile.batch_sizes.front();
        next = requests_[*h].deadline - purge_estimate(m, b) - config_.slack.tardy -
               input_time(m, b) + 1;
    }
    for (auto& s : ms.demand_order) {
        auto& r = requests_[s.handle];
        if (r.gen != s.gen || !r.in_demand) continue;
        next = std::min(next, r.benefit_until + 1);
        break;
    }
    if (next != kNever) schedule_check(m, next);
    for (unsigned g : placed_on_[m]) fill_infer(g);
}

// -------------------------------------------------------------- load stats

void Scheduler::demand_add(ModelId m, Handle h, TimePoint now) {
    auto& r = requests_[h];
    auto& ms = models_[m];
    auto& profile = catalog_->profile(m);
    unsigned b = profile.batch_sizes.front();
    Duration exec = purge_estimate(m, b);
    Duration load = workers_.empty() ? profile.weights_transfer
                                     : workers_[0].estimators->predict_load(m);
    r.benefit_until = r.deadline - load - exec - config_.slack.tardy - config_.slack.lead -
                      input_time(m, b);
    if (r.benefit_until < now) return;
    r.in_demand = true;
    r.demand = static_cast<double>(exec);
    ms.demand += r.demand;
    ms.demand_count++;
    Slot slot{h, r.gen};
    auto it = ms.demand_order.end();
    while (it != ms.demand_order.begin()) {
        auto& prev = requests_[(it - 1)->handle];
        if ((it - 1)->gen == prev.gen && prev.benefit_until <= r.benefit_until) break;
        --it;
    }
    ms.demand_order.insert(it, slot);
    schedule_check(m, r.benefit_until + 1);
}

void Scheduler::demand_remove(ModelId m, Handle h) {
    auto& r = requests_[h];
    if (!r.in_demand) return;
    auto& ms = models_[m];
    r.in_demand = false;
    ms.demand_count--;
    ms.demand = ms.demand_count == 0 ? 0.0 : std::max(0.0, ms.demand - r.demand);
}

void Scheduler::expire_demand(ModelId m, TimePoint now) {
    auto& ms = models_[m];
    bool changed = false;
    while (!ms.demand_order.empty()) {
        Slot s = ms.demand_order.front();
        auto& r = requests_[s.handle];
        if (r.gen != s.gen || !r.in_demand) {
            ms.demand_order.pop_front();
            continue;
        }
        if (r.benefit_until >= now) break;
        ms.demand_order.pop_front();
        demand_remove(m, s.handle);
        changed = true;
    }
    if (changed) update_allocation(m);
}

void Scheduler::update_allocation(ModelId m) {
    auto& ms = models_[m];
    for (auto& [g, a] : ms.alloc) {
        gpus_[g].load_sum = std::max(0.0, gpus_[g].load_sum - a);
    }
    ms.alloc.clear();
    auto& on = placed_on_[m];
    if (on.empty()) {
        set_priority(m, ms.demand);
        return;
    }
    std::vector<double> other;
    other.reserve(on.size());
    for (unsigned g : on) other.push_back(gpus_[g].load_sum);
    auto shares = allocate_demand(ms.demand, other, config_.load_epsilon_ns);
    std::vector<double> loads;
    loads.reserve(on.size());
    for (std::size_t i = 0; i < on.size(); i++) {
        ms.alloc.emplace_back(on[i], shares[i]);
        gpus_[on[i]].load_sum += shares[i];
        loads.push_back(gpus_[on[i]].load_sum);
    }
    set_priority(m, load_priority(ms.demand, shares, loads,
                                  static_cast<double>(config_.capacity_horizon),
                                  config_.load_epsilon_ns));
}

void Scheduler::set_priority(ModelId m, double p) {
    auto& ms = models_[m];
    auto neg = -static_cast<std::int64_t>(m);
    priority_order_.erase({ms.priority, -ms.last_loaded, neg});
    ms.priority = p;
    priority_order_.insert({p, -ms.last_loaded, neg});
}

// ---------------------------------------------------------------- dispatch

void Scheduler::wake(unsigned gpu, bool load, TimePoint t) {
    auto& gs = gpus_[gpu];
    TimePoint& slot = load ? gs.load_wake : gs.infer_wake;
    TimePoint now = runtime_.now();
    if (t < now) t = now;
    if (slot <= t && slot >= now) return;
    slot = t;
    std::weak_ptr<bool> alive = alive_;
    runtime_.at(t, [this, gpu, load, t, alive] {
        if (alive.expired() || !*alive.lock()) return;
        auto& gs = gpus_[gpu];
        TimePoint& s = load ? gs.load_wake : gs.infer_wake;
        if (s == t) s = kNever;
        if (load) {
            fill_load(gpu);
        } else {
            fill_infer(gpu);
        }
    });
}

void Scheduler::fill(unsigned gpu) {
    fill_infer(gpu);
    fill_load(gpu);
}

void Scheduler::fill_infer(unsigned gpu) {
    auto& gs = gpus_[gpu];
    TimePoint now = runtime_.now();
    std::vector<StrategyEntry> deferred;
    while (true) {
        if (gs.infer.outstanding(now) >= config_.work_horizon) {
            // first instant the backlog drops below the horizon
            wake(gpu, false, gs.infer.free_at(now) - config_.work_horizon + 1);
            break;
        }
        if (gs.strategies.empty()) break;
        StrategyEntry e = gs.strategies.top();
        gs.strategies.pop();
        ModelId m = e.model;
        auto& q = models_[m].queues[e.batch_index];
        if (e.stamp != q.stamp || !gs.memory.placed(m)) continue;
        purge(m, e.batch_index, now);
        if (e.stamp != q.stamp || q.live < e.batch_size) continue;
        TimePoint effective = residency_effective(gpu, m);
        if (effective - now >= config_.work_horizon) {
            // Load still far from done; retry once it is within the horizon.
            deferred.push_back(e);
            wake(gpu, false, effective - config_.work_horizon + 1);
            continue;
        }
        dispatch_infer(gpu, m, e.batch_index, now);
    }
    for (auto& e : deferred) gs.strategies.push(e);
}

bool Scheduler::dispatch_infer(unsigned gpu, ModelId m, std::size_t bi, TimePoint now) {
    auto& gs = gpus_[gpu];
    auto& ms = models_[m];
    auto& profile = catalog_->profile(m);
    TimePoint effective = residency_effective(gpu, m);
    auto start_for = [&](unsigned b) {
        return std::max({gs.infer.free_at(now), now + input_time(m, b), effective});
    };

    // Largest batch that keeps the strategy's head request and still meets
    // its deadline. Queues for larger sizes are suffixes of this one, so a
    // shared head means the smaller batch is contained in the larger.
    auto lead = head(m, bi);
    std::size_t chosen = ms.queues.size();
    TimePoint start = 0;
    for (std::size_t bj = ms.queues.size(); bj-- > bi;) {
        unsigned b = profile.batch_sizes[bj];
        if (bj != bi) purge(m, bj, now);
        if (ms.queues[bj].live < b) continue;
        auto h = head(m, bj);
        if (!h || h != lead) continue;
        TimePoint s = start_for(b);
        if (s + predict(gpu, m, b) + config_.slack.tardy <= requests_[*h].deadline) {
            chosen = bj;
            start = s;
            break;
        }
    }
    if (chosen == ms.queues.size()) return false;

    unsigned b = profile.batch_sizes[chosen];
    std::vector<Handle> batch;
    batch.reserve(b);
    for (auto& s : ms.queues[chosen].order) {
        if (dead(s, chosen)) continue;
        batch.push_back(s.handle);
        if (batch.size() == b) break;
    }
    for (Handle h : batch) take(m, h);

    Duration duration = predict(gpu, m, b);
    Window win = window_for(start, now, config_.slack);
    auto* res = gs.memory.residency(m);
    if (res && !res->confirmed) win.earliest = std::max(win.earliest, res->effective);

    ActionId id = next_action_++;
    gs.infer.add(id, win.earliest, start, duration);
    ms.infers_on[gpu]++;
    gs.memory.touch(m, now);

    Action a;
    a.id = id;
    a.kind = ActionKind::Infer;
    a.model_id = m;
    a.gpu = static_cast<std::uint16_t>(gs.local);
    a.earliest = win.earliest;
    a.latest = win.latest;
    a.batch_size = static_cast<std::uint16_t>(b);
    a.expected_duration = duration;
    a.batch.reserve(b);
    for (Handle h : batch) a.batch.push_back(requests_[h].req.id);

    ActionOutcome rec;
    rec.id = id;
    rec.kind = ActionKind::Infer;
    rec.worker = gs.worker;
    rec.gpu = gpu;
    rec.model_id = m;
    rec.batch_size = b;
    rec.predicted_duration = duration;
    rec.predicted_start = start;
    rec.predicted_end = start + duration;
    rec.earliest = win.earliest;
    rec.latest = win.latest;
    send(gpu, std::move(a), rec, std::move(batch));

    update_allocation(m);
    for (std::size_t bk = 0; bk < ms.queues.size(); bk++) refresh_strategy(m, bk, now);
    return true;
}

void Scheduler::fill_loads_for(ModelId m) {
    TimePoint now = runtime_.now();
    std::vector<unsigned> order;
    for (unsigned g = 0; g < gpus_.size(); g++) {
        if (gpus_[g].memory.placed(m)) continue;
        if (gpus_[g].load.outstanding(now) >= config_.work_horizon) continue;
        order.push_back(g);
    }
    // Soonest free Load executor, then the least loaded GPU, then the one
    // with the most free pages.
    std::stable_sort(order.begin(), order.end(), [&](unsigned a, unsigned b) {
        TimePoint fa = gpus_[a].load.free_at(now);
        TimePoint fb = gpus_[b].load.free_at(now);
        if (fa != fb) return fa < fb;
        if (gpus_[a].load_sum != gpus_[b].load_sum) return gpus_[a].load_sum < gpus_[b].load_sum;
        return gpus_[a].memory.pages_free() > gpus_[b].memory.pages_free();
    });
    for (unsigned g : order) {
        if (models_[m].priority <= 0) break;
        fill_load(g);
    }
}

void Scheduler::fill_load(unsigned gpu) {
    auto& gs = gpus_[gpu];
    TimePoint now = runtime_.now();
    while (true) {
        if (gs.load.outstanding(now) >= config_.work_horizon) {
            wake(gpu, true, gs.load.free_at(now) - config_.work_horizon + 1);
            return;
        }
        std::optional<ModelId> candidate;
        for (auto it = priority_order_.rbegin(); it != priority_order_.rend(); ++it) {
            if (std::get<0>(*it) <= 0) break;
            auto m = static_cast<ModelId>(-std::get<2>(*it));
            if (gs.memory.placed(m)) continue;
            candidate = m;
            break;
        }
        if (!candidate || !dispatch_load(gpu, *candidate, now)) return;
    }
}

bool Scheduler::dispatch_load(unsigned gpu, ModelId m, TimePoint now) {
    auto& gs = gpus_[gpu];
    std::uint32_t pages = catalog_->pages_for(m);
    if (pages > gs.memory.pages_total()) return false;

    std::vector<ModelId> victims;
    if (gs.memory.pages_free() < pages) {
        std::uint32_t reclaimed = 0;
        gs.memory.for_each_lru([&](ModelId v) {
            auto* r = gs.memory.residency(v);
            auto& vs = models_[v];
            auto busy = vs.infers_on.find(gpu);
            bool idle = busy == vs.infers_on.end() || busy->second == 0;
            if (v != m && r->confirmed && vs.queued == 0 && idle) {
                victims.push_back(v);
                reclaimed += r->pages;
            }
            return gs.memory.pages_free() + reclaimed < pages;
        });
        if (gs.memory.pages_free() + reclaimed < pages) return false;
    }

    for (ModelId v : victims) {
        gs.memory.unload(v);
        auto& on = placed_on_[v];
        on.erase(std::remove(on.begin(), on.end(), gpu), on.end());
        ActionId id = next_action_++;
        Action a;
        a.id = id;
        a.kind = ActionKind::Unload;
        a.model_id = v;
        a.gpu = static_cast<std::uint16_t>(gs.local);
        a.earliest = now;
        a.latest = kNever;
        ActionOutcome rec;
        rec.id = id;
        rec.kind = ActionKind::Unload;
        rec.worker = gs.worker;
        rec.gpu = gpu;
        rec.model_id = v;
        rec.predicted_start = now;
        rec.predicted_end = now;
        rec.earliest = now;
        rec.latest = kNever;
        send(gpu, std::move(a), rec, {});
        update_allocation(v);
    }

    Duration duration = predict_load_on(gpu, m);
    Prediction pr = predict_completion(gs.load, now, duration, now);
    Window win = window_for(pr.start, now, config_.slack);
    ActionId id = next_action_++;
    gs.memory.begin_load(m, pages, id, pr.end, now);
    placed_on_[m].push_back(gpu);
    gs.load.add(id, win.earliest, pr.start, duration);

    auto& ms = models_[m];
    priority_order_.erase({ms.priority, -ms.last_loaded, -static_cast<std::int64_t>(m)});
    ms.last_loaded = now;
    priority_order_.insert({ms.priority, -ms.last_loaded, -static_cast<std::int64_t>(m)});

    Action a;
    a.id = id;
    a.kind = ActionKind::Load;
    a.model_id = m;
    a.gpu = static_cast<std::uint16_t>(gs.local);
    a.earliest = win.earliest;
    a.latest = win.latest;
    a.expected_duration = duration;
    ActionOutcome rec;
    rec.id = id;
    rec.kind = ActionKind::Load;
    rec.worker = gs.worker;
    rec.gpu = gpu;
    rec.model_id = m;
    rec.predicted_duration = duration;
    rec.predicted_start = pr.start;
    rec.predicted_end = pr.end;
    rec.earliest = win.earliest;
    rec.latest = win.latest;
    send(gpu, std::move(a), rec, {});

    update_allocation(m);
    push_all_strategies(gpu, m, now);
    fill_infer(gpu);
    return true;
}

void Scheduler::send(unsigned, Action action, const ActionOutcome& record,
                     std::vector<Handle> batch) {
    outstanding_.emplace(action.id, Outstanding{record, std::move(batch)});
    send_action_(record.worker, action);
}

// ----------------------------------------------------------------- results

void Scheduler::on_result(unsigned worker, const ActionResult& result) {
    auto it = outstanding_.find(result.action_id);
    if (it == outstanding_.end() || it->second.record.worker != worker) return;
    Outstanding o = std::move(it->second);
    outstanding_.erase(it);
    o.record.result = result;
    TimePoint now = runtime_.now();

    switch (o.record.kind) {
        case ActionKind::Infer:
            handle_infer_result(o, result, now);
            break;
        case ActionKind::Load:
            handle_load_result(o, result, now);
            break;
        case ActionKind::Unload:
            break;
    }
    if (action_log_) action_log_(o.record);
    fill(o.record.gpu);
}

void Scheduler::handle_infer_result(Outstanding& o, const ActionResult& result, TimePoint now) {
    unsigned gpu = o.record.gpu;
    ModelId m = o.record.model_id;
    auto& gs = gpus_[gpu];
    auto& ms = models_[m];
    bool ok = result.status == ActionStatus::Success;
    gs.infer.complete(o.record.id, ok ? result.start + result.device_duration : now);
    if (auto it = ms.infers_on.find(gpu); it != ms.infers_on.end() && it->second > 0) {
        it->second--;
    }

    if (ok) {
        workers_[gs.worker].estimators->record_infer(m, o.record.batch_size,
                                                      result.device_duration);
        for (Handle h : o.batch) {
            auto& r = requests_[h];
            Duration latency = now - r.req.arrival;
            respond(h, latency <= r.req.slo ? ResponseStatus::Ok : ResponseStatus::Timeout,
                    o.record.batch_size, now);
        }
        return;
    }

    auto& profile = catalog_->profile(m);
    unsigned b1 = profile.batch_sizes.front();
    for (Handle h : o.batch) {
        auto& r = requests_[h];
        if (r.deadline - now >= purge_estimate(m, b1) + config_.slack.tardy + input_time(m, b1)) {
            enqueue(h, now);
        } else {
            respond(h, ResponseStatus::Denied, 0, now);
        }
    }
}

void Scheduler::handle_load_result(Outstanding& o, const ActionResult& result, TimePoint now) {
    unsigned gpu = o.record.gpu;
    ModelId m = o.record.model_id;
    auto& gs = gpus_[gpu];
    bool ok = result.status == ActionStatus::Success;
    gs.load.complete(o.record.id, ok ? result.end : now);
    if (ok) {
        workers_[gs.worker].estimators->record_load(m, result.device_duration);
        gs.memory.load_succeeded(m, o.record.id, result.end);
        push_all_strategies(gpu, m, now);
        return;
    }
    bool was_placed = gs.memory.placed(m);
    gs.memory.load_failed(m, o.record.id);
    if (was_placed && !gs.memory.placed(m)) {
        auto& on = placed_on_[m];
        on.erase(std::remove(on.begin(), on.end(), gpu), on.end());
        update_allocation(m);
        if (models_[m].priority > 0) fill_loads_for(m);
    }
}

}  // namespace clockwork
