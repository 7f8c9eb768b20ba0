#include <gtest/gtest.h>

#include <thread>

#include "clockwork/net.hpp"
#include "generators.hpp"
#include "support.hpp"

using namespace clockwork;

namespace {

Action make_action(ActionId id, ActionKind kind, ModelId model, std::uint16_t gpu, TimePoint latest) {
    Action a;
    a.id = id;
    a.kind = kind;
    a.model_id = model;
    a.gpu = gpu;
    a.latest = latest;
    return a;
}

}  // namespace

TEST(Address, Split) {
    EXPECT_EQ(split_address("127.0.0.1:8080"), (std::pair<std::string, std::uint16_t>{"127.0.0.1", 8080}));
    EXPECT_EQ(split_address("::1:9").second, 9);
    for (const char* bad : {"nohost", ":80", "host:", "host:abc", "host:70000", "host:12x"}) {
        EXPECT_THROW(split_address(bad), NetError) << bad;
    }
}

TEST(Connection, RoundTripsRandomMessages) {
    Listener listener("127.0.0.1", 0);
    ASSERT_NE(listener.port(), 0);
    clockwork::testing::MessageGenerator gen(5);
    std::vector<Message> sent;
    for (int i = 0; i < 2000; ++i) sent.push_back(gen.next());

    std::thread writer([&] {
        auto c = Connection::connect("127.0.0.1", listener.port());
        for (auto& m : sent) c.send(m);
    });
    auto server = listener.accept();
    ASSERT_TRUE(server.has_value());
    std::vector<Message> got;
    while (auto m = server->receive()) got.push_back(std::move(*m));
    writer.join();
    EXPECT_EQ(got, sent);
}

TEST(Connection, ConnectRefused) {
    std::uint16_t port;
    {
        Listener l("127.0.0.1", 0);
        port = l.port();
    }
    EXPECT_THROW(Connection::connect("127.0.0.1", port), NetError);
}

TEST(Listener, ShutdownUnblocksAccept) {
    Listener listener("127.0.0.1", 0);
    std::thread closer([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        listener.shutdown();
    });
    EXPECT_FALSE(listener.accept().has_value());
    closer.join();
}

TEST(WorkerServer, HandshakeLoadAndInfer) {
    WorkerConfig config;
    config.worker_id = 4;
    config.gpu_count = 2;
    config.pages_per_gpu = 30;
    WorkerServer server(clockwork::testing::resnet50_catalog(3), config);
    server.start(true);

    auto c = Connection::connect("127.0.0.1", server.port());
    auto hello = c.receive();
    ASSERT_TRUE(hello.has_value());
    auto* hs = std::get_if<WorkerHandshake>(&*hello);
    ASSERT_NE(hs, nullptr);
    EXPECT_EQ(hs->worker_id, 4u);
    EXPECT_EQ(hs->gpu_count, 2u);
    EXPECT_EQ(hs->pages_total, (std::vector<std::uint32_t>{30, 30}));
    EXPECT_EQ(hs->models_resident.size(), 3u);

    Action load = make_action(1, ActionKind::Load, 2, 1, kNever);
    Action infer = make_action(2, ActionKind::Infer, 2, 1, kNever);
    infer.batch_size = 1;
    infer.batch = {77};
    c.send(load);
    auto first = c.receive();
    ASSERT_TRUE(first.has_value());
    auto* r1 = std::get_if<ActionResult>(&*first);
    ASSERT_NE(r1, nullptr);
    EXPECT_EQ(r1->action_id, 1u);
    EXPECT_EQ(r1->status, ActionStatus::Success);
    c.send(infer);
    auto second = c.receive();
    ASSERT_TRUE(second.has_value());
    auto* r2 = std::get_if<ActionResult>(&*second);
    ASSERT_NE(r2, nullptr);
    EXPECT_EQ(r2->status, ActionStatus::Success);
    EXPECT_GE(r2->device_duration, micros(2600));
    c.shutdown();
    server.stop();
    EXPECT_EQ(server.sessions(), 1u);
    EXPECT_EQ(server.last_results().size(), 2u);
}

TEST(WorkerServer, RejectsExpiredAction) {
    WorkerServer server(clockwork::testing::resnet50_catalog(1), WorkerConfig{});
    server.start(true);
    auto c = Connection::connect("127.0.0.1", server.port());
    ASSERT_TRUE(c.receive().has_value());
    c.send(make_action(9, ActionKind::Load, 0, 0, 1));
    auto m = c.receive();
    ASSERT_TRUE(m.has_value());
    EXPECT_EQ(std::get<ActionResult>(*m).status, ActionStatus::RejectedTooLate);
    c.shutdown();
    server.stop();
}
