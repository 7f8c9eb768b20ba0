#include "clockwork/controller_state.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace clockwork {

Duration nearest_rank_percentile(std::vector<Duration> values, double pct) {
    if (values.empty()) return 0;
    if (!(pct > 0 && pct <= 100)) throw std::invalid_argument("percentile must be in (0, 100]");
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(values.size())));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

DurationEstimator::DurationEstimator(Duration seed, unsigned window)
    : seed_(seed), window_(window), cached_(seed) {
    if (window == 0) throw std::invalid_argument("estimator window must be >= 1");
}

void DurationEstimator::record(Duration measured) {
    if (samples_.size() < window_) {
        samples_.push_back(measured);
    } else {
        samples_[next_] = measured;
    }
    next_ = (next_ + 1) % window_;
    refresh();
}

void DurationEstimator::refresh() {
    cached_ = samples_.empty() ? seed_ : nearest_rank_percentile(samples_, 99.0);
}

WorkerEstimators::WorkerEstimators(std::shared_ptr<const ModelCatalog> catalog, unsigned window)
    : catalog_(std::move(catalog)), window_(window) {
    if (window == 0) throw std::invalid_argument("estimator window must be >= 1");
}

std::uint64_t WorkerEstimators::infer_key(ModelId model, unsigned batch_size) const {
    return (static_cast<std::uint64_t>(model) << 32) | batch_size;
}

Duration WorkerEstimators::predict_infer(ModelId model, unsigned batch_size) const {
    auto it = infer_.find(infer_key(model, batch_size));
    if (it != infer_.end()) return it->second.predict();
    if (!catalog_->contains(model)) throw std::out_of_range("unknown model");
    return seed_estimate(catalog_->profile(model), batch_size);
}

Duration WorkerEstimators::predict_load(ModelId model) const {
    auto it = load_.find(model);
    if (it != load_.end()) return it->second.predict();
    if (!catalog_->contains(model)) throw std::out_of_range("unknown model");
    return catalog_->profile(model).weights_transfer;
}

void WorkerEstimators::record_infer(ModelId model, unsigned batch_size, Duration measured) {
    auto key = infer_key(model, batch_size);
    auto it = infer_.find(key);
    if (it == infer_.end()) {
        Duration seed = predict_infer(model, batch_size);
        it = infer_.emplace(key, DurationEstimator(seed, window_)).first;
    }
    it->second.record(measured);
}

void WorkerEstimators::record_load(ModelId model, Duration measured) {
    auto it = load_.find(model);
    if (it == load_.end()) {
        it = load_.emplace(model, DurationEstimator(predict_load(model), window_)).first;
    }
    it->second.record(measured);
}

void ExecutorTimeline::add(ActionId id, TimePoint earliest, TimePoint start, Duration duration) {
    entries_.push_back(Entry{id, earliest, duration, start, start + duration});
}

bool ExecutorTimeline::complete(ActionId id, TimePoint anchor) {
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [&](const Entry& e) { return e.id == id; });
    if (it == entries_.end()) return false;
    // The executor processed everything queued before this action.
    it = entries_.erase(entries_.begin(), it + 1);
    TimePoint t = anchor;
    for (; it != entries_.end(); ++it) {
        it->start = std::max(t, it->earliest);
        it->end = it->start + it->duration;
        t = it->end;
    }
    return true;
}

TimePoint ExecutorTimeline::free_at(TimePoint now) const {
    if (entries_.empty()) return now;
    return std::max(now, entries_.back().end);
}

std::optional<ExecutorTimeline::Entry> ExecutorTimeline::find(ActionId id) const {
    for (auto& e : entries_) {
        if (e.id == id) return e;
    }
    return std::nullopt;
}

Prediction predict_completion(const ExecutorTimeline& timeline, TimePoint now, Duration duration,
                              TimePoint earliest_allowed) {
    TimePoint start = std::max(earliest_allowed, timeline.free_at(now));
    return {start, start + duration};
}

Window window_for(TimePoint predicted_start, TimePoint now, const SlackConfig& slack) {
    return {std::max(now, predicted_start - slack.lead), predicted_start + slack.tardy};
}

const MemoryMirror::Residency* MemoryMirror::residency(ModelId model) const {
    auto it = models_.find(model);
    return it == models_.end() ? nullptr : &it->second;
}

bool MemoryMirror::begin_load(ModelId model, std::uint32_t pages, ActionId action,
                              TimePoint effective, TimePoint now) {
    if (pages > pages_free_ || placed(model)) return false;
    pages_free_ -= pages;
    Residency r;
    r.pages = pages;
    r.effective = effective;
    r.load_action = action;
    r.last_use = now;
    r.loaded_at = now;
    models_.emplace(model, r);
    lru_.insert({now, model});
    return true;
}

void MemoryMirror::load_succeeded(ModelId model, ActionId action, TimePoint actual_end) {
    auto it = models_.find(model);
    if (it == models_.end() || it->second.load_action != action) return;
    it->second.confirmed = true;
    it->second.effective = actual_end;
}

void MemoryMirror::load_failed(ModelId model, ActionId action) {
    auto it = models_.find(model);
    if (it == models_.end() || it->second.load_action != action) return;
    unload(model);
}

std::uint32_t MemoryMirror::unload(ModelId model) {
    auto it = models_.find(model);
    if (it == models_.end()) return 0;
    std::uint32_t pages = it->second.pages;
    pages_free_ += pages;
    lru_.erase({it->second.last_use, model});
    models_.erase(it);
    return pages;
}

void MemoryMirror::touch(ModelId model, TimePoint t) {
    auto it = models_.find(model);
    if (it == models_.end() || t <= it->second.last_use) return;
    lru_.erase({it->second.last_use, model});
    it->second.last_use = t;
    lru_.insert({t, model});
}

std::vector<ModelId> MemoryMirror::lru_order() const {
    std::vector<ModelId> out;
    out.reserve(lru_.size());
    for (auto& [t, m] : lru_) out.push_back(m);
    return out;
}

}  // namespace clockwork
