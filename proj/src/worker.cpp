#include "clockwork/worker.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace clockwork {

JitterSpec JitterSpec::parse(const std::string& text) {
    if (text.empty() || text == "none") return none();
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ':')) parts.push_back(part);
    if (parts[0] != "lognormal" || parts.size() < 2 || parts.size() > 3) {
        throw std::invalid_argument("jitter spec must be none or lognormal:<sigma>[:<seed>], got '" +
                                    text + "'");
    }
    JitterSpec spec;
    spec.kind = Kind::LogNormal;
    try {
        std::size_t used = 0;
        spec.sigma = std::stod(parts[1], &used);
        if (used != parts[1].size()) throw std::invalid_argument("sigma");
        if (parts.size() == 3) spec.seed = std::stoull(parts[2]);
    } catch (const std::exception&) {
        throw std::invalid_argument("malformed jitter spec '" + text + "'");
    }
    if (!std::isfinite(spec.sigma) || spec.sigma < 0) {
        throw std::invalid_argument("jitter sigma must be finite and >= 0");
    }
    return spec;
}

std::string JitterSpec::str() const {
    if (kind == Kind::None) return "none";
    std::ostringstream out;
    out << "lognormal:" << sigma << ":" << seed;
    return out.str();
}

Jitter::Jitter(const JitterSpec& spec, std::uint64_t stream)
    : spec_(spec),
      rng_(spec.seed * 0x9E3779B97F4A7C15ull + stream),
      dist_(0.0, spec.kind == JitterSpec::Kind::LogNormal ? spec.sigma : 0.0) {
    if (!std::isfinite(spec.sigma) || spec.sigma < 0) {
        throw std::invalid_argument("jitter sigma must be finite and >= 0");
    }
}

double Jitter::draw() {
    if (spec_.kind == JitterSpec::Kind::None || spec_.sigma == 0) return 1.0;
    return dist_(rng_);
}

Duration Jitter::apply(Duration base) {
    if (spec_.kind == JitterSpec::Kind::None || spec_.sigma == 0) return base;
    auto d = static_cast<Duration>(std::llround(static_cast<double>(base) * draw()));
    return std::max<Duration>(d, 1);
}

bool PageCache::acquire(ModelId model, std::uint32_t pages) {
    if (pages > free_) return false;
    free_ -= pages;
    held_[model] += pages;
    return true;
}

std::uint32_t PageCache::release(ModelId model) {
    auto it = held_.find(model);
    if (it == held_.end()) return 0;
    std::uint32_t pages = it->second;
    free_ += pages;
    held_.erase(it);
    return pages;
}

std::optional<TimePoint> PageCache::last_touch(ModelId model) const {
    auto it = lru_touch_.find(model);
    if (it == lru_touch_.end()) return std::nullopt;
    return it->second;
}

bool IOCacheGauge::try_acquire(std::uint64_t bytes) {
    if (bytes > capacity_ - in_use_) return false;
    in_use_ += bytes;
    return true;
}

void IOCacheGauge::release(std::uint64_t bytes) {
    in_use_ -= std::min(bytes, in_use_);
}

Worker::Worker(Runtime& runtime, std::shared_ptr<const ModelCatalog> catalog, WorkerConfig config,
               ResultSink sink)
    : runtime_(runtime),
      catalog_(std::move(catalog)),
      config_(std::move(config)),
      sink_(std::move(sink)),
      jitter_(config_.jitter, config_.worker_id) {
    if (config_.gpu_count == 0) throw std::invalid_argument("worker needs at least one GPU");
    if (config_.pages_per_gpu == 0) throw std::invalid_argument("pages_per_gpu must be > 0");
    gpus_.reserve(config_.gpu_count);
    for (unsigned g = 0; g < config_.gpu_count; g++) {
        gpus_.emplace_back(config_.pages_per_gpu, config_.iocache_bytes);
    }
}

WorkerHandshake Worker::handshake() const {
    WorkerHandshake h;
    h.worker_id = config_.worker_id;
    h.gpu_count = config_.gpu_count;
    h.pages_total.assign(config_.gpu_count, config_.pages_per_gpu);
    h.models_resident.reserve(catalog_->size());
    for (auto& e : catalog_->entries()) h.models_resident.push_back(e.id);
    return h;
}

bool Worker::resident(unsigned gpu, ModelId model) const {
    auto& g = gpus_.at(gpu);
    return g.pages.holds(model) && g.loading.count(model) == 0;
}

std::size_t Worker::pending_actions() const {
    std::size_t n = 0;
    for (auto& g : gpus_) n += g.load_exec.pending.size() + g.infer_exec.pending.size();
    return n;
}

void Worker::emit(const ActionResult& result) {
    if (config_.keep_result_log) result_log_.push_back(result);
    sink_(result);
}

void Worker::reject(const Action& action, ActionStatus status) {
    TimePoint now = runtime_.now();
    emit(ActionResult{action.id, status, now, now, 0});
}

void Worker::on_action(const Action& action) {
    bool valid = action.gpu < gpus_.size() && catalog_->contains(action.model_id) &&
                 action.earliest <= action.latest;
    std::uint64_t io_bytes = 0;
    if (valid && action.kind == ActionKind::Infer) {
        auto& profile = catalog_->profile(action.model_id);
        valid = action.batch_size > 0 && action.batch.size() == action.batch_size &&
                profile.supports(action.batch_size);
        io_bytes = static_cast<std::uint64_t>(action.batch_size) *
                   (profile.input_bytes + profile.output_bytes);
        valid = valid && io_bytes <= config_.iocache_bytes;
    }
    if (!valid) {
        reject(action, ActionStatus::MalformedAction);
        return;
    }

    unsigned g = action.gpu;
    auto& gpu = gpus_[g];
    auto p = std::make_shared<Pending>();
    p->action = action;
    p->io_bytes = io_bytes;

    if (action.kind == ActionKind::Infer) {
        gpu.infer_exec.pending.insert(p);
        if (gpu.io.try_acquire(io_bytes)) {
            p->io_reserved = true;
            start_input(gpu, p);
        } else {
            gpu.io_waiting.push_back(p);
        }
        pump_infer(g);
    } else {
        gpu.load_exec.pending.insert(p);
        pump_load(g);
    }
}

void Worker::start_input(Gpu& gpu, const PendingPtr& p) {
    auto& profile = catalog_->profile(p->action.model_id);
    TimePoint start = std::max(runtime_.now(), gpu.input_free_at);
    p->input_ready = start + static_cast<Duration>(p->action.batch_size) * profile.input_transfer;
    gpu.input_free_at = p->input_ready;
}

void Worker::release_io(unsigned g, const PendingPtr& p) {
    auto& gpu = gpus_[g];
    p->done = true;
    if (p->io_reserved) {
        gpu.io.release(p->io_bytes);
        p->io_reserved = false;
        admit_io_waiters(g);
    }
}

void Worker::admit_io_waiters(unsigned g) {
    auto& gpu = gpus_[g];
    bool admitted = false;
    while (!gpu.io_waiting.empty()) {
        auto p = gpu.io_waiting.front();
        if (p->done) {
            gpu.io_waiting.pop_front();
            continue;
        }
        if (!gpu.io.try_acquire(p->io_bytes)) break;
        gpu.io_waiting.pop_front();
        p->io_reserved = true;
        start_input(gpu, p);
        admitted = true;
    }
    if (admitted) pump_infer(g);
}

void Worker::wake(unsigned g, bool load_exec, TimePoint t) {
    auto& ex = load_exec ? gpus_[g].load_exec : gpus_[g].infer_exec;
    TimePoint now = runtime_.now();
    if (ex.next_wake <= t && ex.next_wake > now) return;
    ex.next_wake = t;
    runtime_.at(t, [this, g, load_exec, t] {
        auto& e = load_exec ? gpus_[g].load_exec : gpus_[g].infer_exec;
        if (e.next_wake == t) e.next_wake = kNever;
        if (load_exec) {
            pump_load(g);
        } else {
            pump_infer(g);
        }
    });
}

void Worker::pump_infer(unsigned g) {
    auto& gpu = gpus_[g];
    auto& ex = gpu.infer_exec;
    while (!ex.busy && !ex.pending.empty()) {
        PendingPtr p = *ex.pending.begin();
        const Action& a = p->action;
        TimePoint now = runtime_.now();
        if (now > a.latest) {
            ex.pending.erase(ex.pending.begin());
            release_io(g, p);
            reject(a, ActionStatus::RejectedTooLate);
            continue;
        }
        if (now < a.earliest) {
            wake(g, false, a.earliest);
            return;
        }
        if (p->input_ready > now) {
            // Either copying inputs or blocked on IOCache; give up at latest.
            wake(g, false, std::min(p->input_ready, a.latest + 1));
            return;
        }
        ex.pending.erase(ex.pending.begin());
        run_infer(g, p);
    }
}

void Worker::run_infer(unsigned g, const PendingPtr& p) {
    auto& gpu = gpus_[g];
    const Action& a = p->action;
    if (!gpu.pages.holds(a.model_id) || gpu.loading.count(a.model_id) != 0) {
        release_io(g, p);
        reject(a, ActionStatus::ModelNotLoaded);
        return;
    }
    auto& profile = catalog_->profile(a.model_id);
    TimePoint start = runtime_.now();
    Duration exec = jitter_.apply(profile.exec(a.batch_size));
    gpu.executing = a.model_id;
    gpu.infer_exec.busy = true;
    gpu.infer_exec.busy_until = start + exec;
    gpu.pages.touch(a.model_id, start);

    runtime_.at(start + exec, [this, g, p, start, exec] {
        auto& gpu = gpus_[g];
        auto& profile = catalog_->profile(p->action.model_id);
        gpu.executing.reset();
        gpu.infer_exec.busy = false;
        gpu.infer_busy += exec;

        TimePoint out_start = std::max(runtime_.now(), gpu.output_free_at);
        TimePoint out_end =
            out_start + static_cast<Duration>(p->action.batch_size) * profile.output_transfer;
        gpu.output_free_at = out_end;
        runtime_.at(out_end, [this, g, p, start, out_end, exec] {
            release_io(g, p);
            emit(ActionResult{p->action.id, ActionStatus::Success, start, out_end, exec});
        });

        pump_infer(g);
        pump_load(g);
    });
}

void Worker::pump_load(unsigned g) {
    auto& gpu = gpus_[g];
    auto& ex = gpu.load_exec;
    while (!ex.busy && !ex.pending.empty()) {
        PendingPtr p = *ex.pending.begin();
        const Action& a = p->action;
        TimePoint now = runtime_.now();
        if (now > a.latest) {
            ex.pending.erase(ex.pending.begin());
            reject(a, ActionStatus::RejectedTooLate);
            continue;
        }
        if (now < a.earliest) {
            wake(g, true, a.earliest);
            return;
        }
        if (a.kind == ActionKind::Unload && gpu.executing == a.model_id) {
            // Serialized behind the in-flight Exec; its completion pumps us.
            return;
        }
        ex.pending.erase(ex.pending.begin());
        if (a.kind == ActionKind::Load) {
            run_load(g, a);
        } else {
            run_unload(g, a);
        }
    }
}

void Worker::run_load(unsigned g, const Action& a) {
    auto& gpu = gpus_[g];
    TimePoint now = runtime_.now();
    if (gpu.pages.holds(a.model_id)) {
        // Already resident (or loading): nothing to copy.
        emit(ActionResult{a.id, ActionStatus::Success, now, now, 0});
        return;
    }
    if (!gpu.pages.acquire(a.model_id, catalog_->pages_for(a.model_id))) {
        reject(a, ActionStatus::OutOfPages);
        return;
    }
    Duration copy = jitter_.apply(catalog_->profile(a.model_id).weights_transfer);
    gpu.loading[a.model_id] = true;
    gpu.load_exec.busy = true;
    gpu.load_exec.busy_until = now + copy;
    ActionId id = a.id;
    ModelId model = a.model_id;
    runtime_.at(now + copy, [this, g, id, model, now, copy] {
        auto& gpu = gpus_[g];
        gpu.loading.erase(model);
        gpu.load_exec.busy = false;
        gpu.load_busy += copy;
        emit(ActionResult{id, ActionStatus::Success, now, now + copy, copy});
        pump_load(g);
    });
}

void Worker::run_unload(unsigned g, const Action& a) {
    TimePoint now = runtime_.now();
    gpus_[g].pages.release(a.model_id);
    emit(ActionResult{a.id, ActionStatus::Success, now, now, 0});
}

}  // namespace clockwork
