#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "clockwork/scheduler.hpp"
#include "sim_bench.hpp"
#include "support.hpp"

using namespace clockwork;
using clockwork::testing::SimBench;
using clockwork::testing::resnet50_catalog;

namespace {

// resnet50 restricted to batch sizes 1, 2 and 4.
std::shared_ptr<const ModelCatalog> small_batches(unsigned copies) {
    ModelProfile p = clockwork::testing::zoo_profile("resnet50");
    p.batch_sizes = {1, 2, 4};
    p.exec_duration.resize(3);
    return std::make_shared<const ModelCatalog>(make_catalog(p, copies));
}

// Scheduler whose actions are answered by hand.
struct Manual {
    explicit Manual(std::shared_ptr<const ModelCatalog> c, std::uint32_t pages = 500)
        : catalog(std::move(c)),
          scheduler(runtime, catalog, {},
                    [this](unsigned, const Action& a) { actions.push_back(a); },
                    [this](const RequestOutcome& o) { responses[o.response.id] = o; }) {
        scheduler.add_worker(WorkerHandshake{0, 1, {pages}, {}});
    }
    void at(TimePoint t) { runtime.run_until(t); }
    void request(RequestId id, Duration slo, ModelId model = 0) {
        scheduler.on_request(InferenceRequest{id, model, slo, 0, 0});
    }
    void reply(const Action& a, ActionStatus status, TimePoint start, Duration device) {
        ActionResult r{a.id, status, start, start + device,
                       status == ActionStatus::Success ? device : 0};
        scheduler.on_result(0, r);
    }

    SimRuntime runtime;
    std::shared_ptr<const ModelCatalog> catalog;
    std::vector<Action> actions;
    std::map<RequestId, RequestOutcome> responses;
    Scheduler scheduler;
};

// Share for GPU 0 by bisection on a0 * l0 = a1 * l1, a0 + a1 = d.
double two_gpu_share(double demand, double l0, double l1) {
    double lo = 0, hi = demand;
    for (int i = 0; i < 200; i++) {
        double mid = (lo + hi) / 2;
        if (mid * l0 < (demand - mid) * l1) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return (lo + hi) / 2;
}

}  // namespace

TEST(Allocation, InverseToLoadOneToTwo) {
    double load = static_cast<double>(millis(3));
    double demand = static_cast<double>(millis(9));
    auto shares = allocate_demand(demand, {2 * load, load}, 1000.0);
    ASSERT_EQ(shares.size(), 2u);
    double oracle = two_gpu_share(demand, 2 * load, load);
    EXPECT_NEAR(shares[0], oracle, 1e-3);
    EXPECT_NEAR(shares[1], demand - oracle, 1e-3);
    EXPECT_NEAR(shares[1] / shares[0], 2.0, 1e-9);
}

TEST(Allocation, IdleGpusShareEvenly) {
    auto shares = allocate_demand(600.0, {0.0, 0.0, 0.0}, 1000.0);
    for (double a : shares) EXPECT_DOUBLE_EQ(a, 200.0);
    // Below the guard, loads are indistinguishable.
    shares = allocate_demand(600.0, {10.0, 900.0}, 1000.0);
    EXPECT_DOUBLE_EQ(shares[0], shares[1]);
}

TEST(Priority, UnplacedModelOwesItsDemand) {
    EXPECT_DOUBLE_EQ(load_priority(static_cast<double>(millis(10)), {}, {}, 1e8, 1000.0),
                     static_cast<double>(millis(10)));
}

TEST(Priority, SoleModelOnIdleGpuIsNegative) {
    double d = static_cast<double>(millis(1));
    double p = load_priority(d, {d}, {d}, static_cast<double>(millis(100)), 1000.0);
    EXPECT_DOUBLE_EQ(p, static_cast<double>(-millis(99)));
}

TEST(Priority, ScalesWithDemandAndCapacity) {
    // Common positive scaling leaves the sign and ordering intact.
    double p1 = load_priority(5e6, {2e6}, {4e6}, 1e8, 1.0);
    double p2 = load_priority(5e9, {2e9}, {4e9}, 1e11, 1.0);
    EXPECT_NEAR(p2 / p1, 1000.0, 1e-9);
}

TEST(Scheduler, AdmitsColdRequestAndPlansLoad) {
    SimBench bench(resnet50_catalog(1), 1, 1, 500);
    auto id = bench.request(0, millis(100), 0);
    bench.run();
    auto sent = bench.sent();
    ASSERT_EQ(sent.size(), 2u);
    EXPECT_EQ(sent[0].second.kind, ActionKind::Load);
    EXPECT_EQ(sent[1].second.kind, ActionKind::Infer);
    auto& r = bench.responses().at(id);
    EXPECT_EQ(r.response.status, ResponseStatus::Ok);
    EXPECT_TRUE(r.response.cold_start);
    EXPECT_LE(r.response.latency, millis(100));
    EXPECT_GE(r.response.latency, millis_f(8.33) + millis_f(2.61));
}

TEST(Scheduler, AdmitsWarmRequest) {
    SimBench bench(resnet50_catalog(1), 1, 1, 500);
    bench.request(0, millis(100), 0);
    auto warm = bench.request(0, millis(100), millis(50));
    bench.run();
    auto& r = bench.responses().at(warm);
    EXPECT_EQ(r.response.status, ResponseStatus::Ok);
    EXPECT_FALSE(r.response.cold_start);
    // Input, exec, output; nothing queued ahead.
    EXPECT_EQ(r.response.latency, micros(50) + millis_f(2.61) + micros(50));
}

TEST(Scheduler, DeniesInfeasibleSloAtAdmission) {
    SimBench bench(resnet50_catalog(1), 1, 1, 500);
    bench.request(0, millis(100), 0);
    auto tight = bench.request(0, millis(1), millis(50));
    bench.run();
    auto& r = bench.responses().at(tight);
    EXPECT_EQ(r.response.status, ResponseStatus::Denied);
    EXPECT_EQ(r.response.latency, 0);
    EXPECT_EQ(r.batch_size, 0u);
    EXPECT_EQ(bench.sent_of(ActionKind::Infer).size(), 1u);
}

TEST(Scheduler, RejectsBadRequests) {
    SimBench bench(resnet50_catalog(1), 1, 1, 500);
    EXPECT_THROW(bench.scheduler().on_request(InferenceRequest{1, 5, millis(10), 0, 0}),
                 std::invalid_argument);
    EXPECT_THROW(bench.scheduler().on_request(InferenceRequest{1, 0, 0, 0, 0}),
                 std::invalid_argument);
}

TEST(Scheduler, SixteenQueuedBecomeOneBatch) {
    SimBench bench(resnet50_catalog(1), 1, 1, 500);
    for (int i = 0; i < 16; i++) bench.request(0, millis(500), 0);
    bench.run();
    auto infers = bench.sent_of(ActionKind::Infer);
    ASSERT_EQ(infers.size(), 1u);
    EXPECT_EQ(infers[0].batch_size, 16);
    for (auto& [id, r] : bench.responses()) EXPECT_EQ(r.response.status, ResponseStatus::Ok);
}

TEST(Scheduler, ThreeQueuedGiveBatchTwoThenOne) {
    SimBench bench(small_batches(1), 1, 1, 500);
    for (int i = 0; i < 3; i++) bench.request(0, millis(500), 0);
    bench.run();
    auto infers = bench.sent_of(ActionKind::Infer);
    ASSERT_EQ(infers.size(), 2u);
    EXPECT_EQ(infers[0].batch_size, 2);
    EXPECT_EQ(infers[0].batch, (std::vector<RequestId>{1, 2}));
    EXPECT_EQ(infers[1].batch_size, 1);
    EXPECT_EQ(infers[1].batch, (std::vector<RequestId>{3}));
}

TEST(Scheduler, TightHeadFallsBackToBatchOne) {
    // The Load ends at 8.33ms. With a 14ms SLO the scheduling deadline is
    // 14 - 0.8 - 1 = 12.2ms: batch 1 fits (8.33 + 2.61 + 1 = 11.94) and
    // batch 2 does not (8.33 + 3.78 + 1 = 13.11).
    SimBench bench(resnet50_catalog(1), 1, 1, 500);
    auto warm = bench.request(0, millis(100), 0);
    auto head = bench.request(0, millis(14), 0);
    auto second = bench.request(0, millis(14), 0);
    bench.run();
    auto infers = bench.sent_of(ActionKind::Infer);
    ASSERT_GE(infers.size(), 1u);
    EXPECT_EQ(infers[0].batch_size, 1);
    EXPECT_EQ(infers[0].batch, std::vector<RequestId>{head});
    EXPECT_EQ(bench.responses().at(head).response.status, ResponseStatus::Ok);
    EXPECT_EQ(bench.responses().at(second).response.status, ResponseStatus::Denied);
    EXPECT_EQ(bench.responses().at(warm).response.status, ResponseStatus::Ok);
}

// Two fillers keep the GPU busy past the work horizon while 17 requests
// queue. The tight one cannot make batch 16 but fits batch 8; the batch
// chosen for it has to include it rather than run 16 of the others.
TEST(Scheduler, GrowthKeepsStrategyHead) {
    SimBench bench(resnet50_catalog(1), 1, 1, 500);
    bench.request(0, millis(100), 0);
    const TimePoint t0 = millis(100);
    bench.request(0, millis(100), t0);
    bench.request(0, millis(100), t0);
    auto tight = bench.request(0, millis(18), t0);
    for (int i = 0; i < 16; i++) bench.request(0, millis(100), t0);
    bench.run();
    auto infers = bench.sent_of(ActionKind::Infer);
    ASSERT_GE(infers.size(), 4u);
    EXPECT_EQ(infers[3].batch_size, 8);
    EXPECT_EQ(infers[3].batch.front(), tight);
    EXPECT_EQ(bench.responses().at(tight).response.status, ResponseStatus::Ok);
    for (auto& [id, r] : bench.responses()) EXPECT_EQ(r.response.status, ResponseStatus::Ok) << id;
}

TEST(Scheduler, OutputMargin) {
    SimBench bench(resnet50_catalog(1), 1, 1, 500);
    EXPECT_EQ(bench.scheduler().output_margin(0), 16 * micros(50) + millis(1));
}

TEST(Scheduler, LoadsHighestDemandModel) {
    SimBench bench(resnet50_catalog(3), 1, 1, 500);
    bench.request(0, millis(100), 0);
    bench.run();
    // Model 0 resident and idle; model 2 has demand and no placement.
    TimePoint t = bench.runtime().now() + millis(10);
    bench.request(2, millis(100), t);
    bench.run();
    auto loads = bench.sent_of(ActionKind::Load);
    ASSERT_EQ(loads.size(), 2u);
    EXPECT_EQ(loads[1].model_id, 2u);
    EXPECT_FALSE(bench.scheduler().memory(0).placed(1));
}

TEST(Scheduler, NoLoadWithoutPositivePriority) {
    SimBench bench(resnet50_catalog(2), 1, 1, 500);
    bench.request(0, millis(100), 0);
    bench.run();
    auto before = bench.sent().size();
    bench.request(0, millis(100), bench.runtime().now() + millis(10));
    bench.run();
    EXPECT_EQ(bench.sent_of(ActionKind::Load).size(), 1u);
    EXPECT_EQ(bench.sent().size(), before + 1);
    EXPECT_LE(bench.scheduler().load_stats(0).priority, 0.0);
    EXPECT_EQ(bench.scheduler().load_stats(1).priority, 0.0);
}

TEST(Scheduler, EvictsLruBeforeLoading) {
    // Room for exactly one resnet50 (7 pages).
    SimBench bench(resnet50_catalog(2), 1, 1, 7);
    bench.request(0, millis(100), 0);
    bench.run();
    auto id = bench.request(1, millis(100), bench.runtime().now() + millis(10));
    bench.run();
    auto& sent = bench.sent();
    ASSERT_EQ(sent.size(), 5u);
    EXPECT_EQ(sent[2].second.kind, ActionKind::Unload);
    EXPECT_EQ(sent[2].second.model_id, 0u);
    EXPECT_EQ(sent[3].second.kind, ActionKind::Load);
    EXPECT_EQ(sent[3].second.model_id, 1u);
    EXPECT_EQ(sent[4].second.kind, ActionKind::Infer);
    EXPECT_EQ(bench.responses().at(id).response.status, ResponseStatus::Ok);
    EXPECT_EQ(bench.worker(0).page_cache(0).pages_free(), 0u);
    EXPECT_TRUE(bench.worker(0).resident(0, 1));
}

TEST(Scheduler, KeepsModelWithQueuedWork) {
    // Model 0 still has queued requests, so it cannot be the victim.
    SimBench bench(resnet50_catalog(2), 1, 1, 7);
    for (int i = 0; i < 40; i++) bench.request(0, millis(200), 0);
    bench.request(1, millis(200), millis(1));
    bench.run();
    auto& sent = bench.sent();
    std::size_t first_unload = sent.size();
    for (std::size_t i = 0; i < sent.size(); i++) {
        if (sent[i].second.kind == ActionKind::Unload) {
            first_unload = i;
            break;
        }
    }
    ASSERT_LT(first_unload, sent.size());
    for (std::size_t i = 0; i < first_unload; i++) {
        EXPECT_FALSE(sent[i].second.kind == ActionKind::Infer && sent[i].second.model_id == 1);
    }
    EXPECT_EQ(bench.scheduler().queued_requests(0), 0u);
}

TEST(Scheduler, BatchFourSuccessAnswersAll) {
    Manual m(small_batches(1));
    for (RequestId id = 1; id <= 4; id++) m.request(id, millis(500));
    ASSERT_EQ(m.actions.size(), 1u);
    auto load = m.actions[0];
    EXPECT_EQ(load.kind, ActionKind::Load);
    m.at(millis_f(8.33));
    m.reply(load, ActionStatus::Success, 0, millis_f(8.33));
    ASSERT_EQ(m.actions.size(), 2u);
    auto infer = m.actions[1];
    EXPECT_EQ(infer.batch_size, 4);
    m.at(millis(15));
    m.reply(infer, ActionStatus::Success, millis(9), millis_f(5.61));
    ASSERT_EQ(m.responses.size(), 4u);
    for (auto& [id, r] : m.responses) {
        EXPECT_EQ(r.response.status, ResponseStatus::Ok);
        EXPECT_EQ(r.batch_size, 4u);
        EXPECT_EQ(r.response.latency, millis(15));
    }
    EXPECT_EQ(m.scheduler.predict_infer(0, 0, 4), millis_f(5.61));
}

TEST(Scheduler, RejectedPastDeadlinesDenied) {
    Manual m(small_batches(1));
    for (RequestId id = 1; id <= 4; id++) m.request(id, millis(30));
    m.at(millis_f(8.33));
    m.reply(m.actions[0], ActionStatus::Success, 0, millis_f(8.33));
    ASSERT_EQ(m.actions.size(), 2u);
    m.at(millis(40));
    m.reply(m.actions[1], ActionStatus::RejectedTooLate, millis(40), 0);
    ASSERT_EQ(m.responses.size(), 4u);
    for (auto& [id, r] : m.responses) {
        EXPECT_EQ(r.response.status, ResponseStatus::Denied);
        EXPECT_EQ(r.batch_size, 0u);
    }
    EXPECT_EQ(m.scheduler.predict_infer(0, 0, 4), millis_f(5.61));  // no estimator update
    EXPECT_TRUE(m.scheduler.infer_timeline(0).entries().empty());
}

TEST(Scheduler, RejectedWithSlackIsRequeued) {
    Manual m(small_batches(1));
    m.request(1, millis(200));
    m.at(millis_f(8.33));
    m.reply(m.actions[0], ActionStatus::Success, 0, millis_f(8.33));
    ASSERT_EQ(m.actions.size(), 2u);
    m.at(millis(12));
    m.reply(m.actions[1], ActionStatus::RejectedTooLate, millis(12), 0);
    EXPECT_TRUE(m.responses.empty());
    ASSERT_EQ(m.actions.size(), 3u);
    EXPECT_EQ(m.actions[2].kind, ActionKind::Infer);
    EXPECT_EQ(m.actions[2].batch, std::vector<RequestId>{1});
}

TEST(Scheduler, OutOfPagesRollsBackResidency) {
    Manual m(small_batches(1));
    m.request(1, millis(200));
    ASSERT_EQ(m.actions.size(), 1u);
    EXPECT_TRUE(m.scheduler.memory(0).placed(0));
    m.at(millis(1));
    m.reply(m.actions[0], ActionStatus::OutOfPages, millis(1), 0);
    // Rolled back, then the still-pending demand plans a fresh Load.
    ASSERT_EQ(m.actions.size(), 2u);
    EXPECT_EQ(m.actions[1].kind, ActionKind::Load);
    EXPECT_NE(m.actions[1].id, m.actions[0].id);
    EXPECT_EQ(m.scheduler.memory(0).residency(0)->load_action, m.actions[1].id);
}

TEST(Scheduler, UnknownResultIgnored) {
    Manual m(small_batches(1));
    m.scheduler.on_result(0, ActionResult{999, ActionStatus::Success, 0, 1, 1});
    EXPECT_TRUE(m.responses.empty());
    EXPECT_TRUE(m.actions.empty());
}

TEST(Scheduler, LateCompletionIsTimeoutNotOk) {
    Manual m(small_batches(1));
    m.request(1, millis(30));
    m.at(millis_f(8.33));
    m.reply(m.actions[0], ActionStatus::Success, 0, millis_f(8.33));
    m.at(millis(31));
    m.reply(m.actions[1], ActionStatus::Success, millis(20), millis(11));
    EXPECT_EQ(m.responses.at(1).response.status, ResponseStatus::Timeout);
}

TEST(Scheduler, ActionWindowsAroundPrediction) {
    SimBench bench(resnet50_catalog(1), 1, 1, 500);
    bench.request(0, millis(100), 0);
    bench.request(0, millis(100), millis(20));
    bench.run();
    for (auto& o : bench.log()) {
        if (o.kind == ActionKind::Unload) continue;
        EXPECT_EQ(o.latest, o.predicted_start + millis(1));
        EXPECT_LE(o.earliest, o.predicted_start);
        EXPECT_EQ(o.result.status, ActionStatus::Success);
        EXPECT_GE(o.result.start, o.earliest);
        EXPECT_LE(o.result.start, o.latest);
    }
}

TEST(Scheduler, PlacedModelOnIdleGpuHasNegativePriority) {
    Manual m(small_batches(2));
    m.request(1, millis(200));
    auto placed = m.scheduler.load_stats(0);
    EXPECT_GT(placed.demand, 0.0);
    ASSERT_EQ(placed.allocation.size(), 1u);
    EXPECT_DOUBLE_EQ(placed.allocation[0].second, placed.demand);
    EXPECT_LT(placed.priority, 0.0);
    EXPECT_DOUBLE_EQ(placed.priority, placed.demand - static_cast<double>(millis(100)));
}

TEST(Scheduler, UnplacedPriorityEqualsDemand) {
    // One page: no model fits, so nothing is ever placed.
    Manual m(small_batches(2), 1);
    m.request(1, millis(200), 1);
    m.request(2, millis(200), 1);
    auto stats = m.scheduler.load_stats(1);
    EXPECT_TRUE(stats.allocation.empty());
    EXPECT_DOUBLE_EQ(stats.demand, 2.0 * static_cast<double>(millis_f(2.61)));
    EXPECT_DOUBLE_EQ(stats.priority, stats.demand);
}
