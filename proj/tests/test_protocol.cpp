#include <gtest/gtest.h>

#include "clockwork/protocol.hpp"
#include "generators.hpp"

using namespace clockwork;

namespace {

ProtocolError::Kind decode_error(std::span<const std::uint8_t> bytes) {
    try {
        decode_message(bytes);
    } catch (const ProtocolError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "decode succeeded";
    return ProtocolError::Kind::Invariant;
}

std::vector<std::uint8_t> le(std::uint64_t value, int width) {
    std::vector<std::uint8_t> out;
    for (int i = 0; i < width; i++) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    return out;
}

}  // namespace

TEST(Protocol, UnloadFrameIs38Bytes) {
    Action unload;
    unload.kind = ActionKind::Unload;
    auto bytes = encode_message(unload);
    // id 8, kind 1, model 4, earliest 8, latest 8, gpu 2, batch_size 2
    constexpr std::size_t payload = 8 + 1 + 4 + 8 + 8 + 2 + 2;
    ASSERT_EQ(bytes.size(), 4 + 1 + payload);
    EXPECT_EQ(bytes.size(), 38u);
    EXPECT_EQ(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 4), le(payload, 4));
    EXPECT_EQ(bytes[4], 2);  // Action tag
    EXPECT_EQ(bytes[13], 2);  // kind Unload
}

TEST(Protocol, FieldOrderLittleEndian) {
    ActionResult r{0x0102030405060708ull, ActionStatus::OutOfPages, 0x10, 0x20, 0};
    auto bytes = encode_message(r);
    std::vector<std::uint8_t> expect = le(8 + 1 + 24, 4);
    expect.push_back(3);
    auto id = le(r.action_id, 8);
    expect.insert(expect.end(), id.begin(), id.end());
    expect.push_back(2);
    for (auto v : {0x10, 0x20, 0}) {
        auto f = le(static_cast<std::uint64_t>(v), 8);
        expect.insert(expect.end(), f.begin(), f.end());
    }
    EXPECT_EQ(bytes, expect);
}

TEST(Protocol, InferRoundTrip) {
    Action a;
    a.id = 42;
    a.kind = ActionKind::Infer;
    a.model_id = 3;
    a.gpu = 1;
    a.earliest = millis(9);
    a.latest = millis(11);
    a.batch_size = 2;
    a.batch = {1, 2};
    a.expected_duration = millis_f(3.78);
    auto decoded = decode_message(encode_message(a));
    ASSERT_TRUE(std::holds_alternative<Action>(decoded));
    EXPECT_EQ(std::get<Action>(decoded), a);
}

TEST(Protocol, UnknownTag) {
    auto bytes = encode_message(InferenceResponse{1, ResponseStatus::Ok, 5, false});
    bytes[4] = 0xFF;
    EXPECT_EQ(decode_error(bytes), ProtocolError::Kind::UnknownTag);
}

TEST(Protocol, DeclaredLengthBeyondPayload) {
    std::vector<std::uint8_t> frame = le(10, 4);
    frame.push_back(3);
    for (int i = 0; i < 7; i++) frame.push_back(0);  // 8 payload bytes counting the tag
    frame.resize(4 + 8);
    EXPECT_EQ(decode_error(frame), ProtocolError::Kind::Truncated);
    EXPECT_FALSE(complete_frame_size(frame).has_value());
}

TEST(Protocol, BatchSizeMismatchIsInvariantError) {
    Action a;
    a.kind = ActionKind::Infer;
    a.batch_size = 3;
    a.batch = {7};
    EXPECT_THROW(check_invariants(a), ProtocolError);
    EXPECT_EQ(decode_error(encode_message(a)), ProtocolError::Kind::Invariant);
}

TEST(Protocol, OtherInvariants) {
    Action late;
    late.kind = ActionKind::Load;
    late.earliest = 10;
    late.latest = 5;
    EXPECT_EQ(decode_error(encode_message(late)), ProtocolError::Kind::Invariant);

    ActionResult failed{1, ActionStatus::RejectedTooLate, 0, 0, 5};
    EXPECT_EQ(decode_error(encode_message(failed)), ProtocolError::Kind::Invariant);

    WorkerHandshake h{1, 2, {10}, {}};
    EXPECT_THROW(check_invariants(h), ProtocolError);
    EXPECT_THROW(decode_message(encode_message(h)), ProtocolError);
    WorkerHandshake zero{1, 1, {0}, {}};
    EXPECT_EQ(decode_error(encode_message(zero)), ProtocolError::Kind::Invariant);
}

TEST(Protocol, TrailingBytesRejected) {
    auto bytes = encode_message(InferenceRequest{1, 2, 3, 4, 5});
    bytes.push_back(0);
    EXPECT_THROW(decode_message(bytes), ProtocolError);
}

TEST(Protocol, CompleteFrameSize) {
    auto one = encode_message(InferenceRequest{1, 2, 3, 4, 5});
    auto two = one;
    two.insert(two.end(), one.begin(), one.end());
    EXPECT_EQ(complete_frame_size(two), one.size());
    EXPECT_FALSE(complete_frame_size(std::span(two).first(3)).has_value());
}

TEST(Protocol, EnumNames) {
    EXPECT_STREQ(to_string(ActionKind::Unload), "unload");
    EXPECT_STREQ(to_string(ActionStatus::OutOfPages), "out_of_pages");
    EXPECT_STREQ(to_string(ResponseStatus::Timeout), "timeout");
}

TEST(Protocol, RandomRoundTripDeterministic) {
    clockwork::testing::MessageGenerator gen(11);
    for (int i = 0; i < 5000; i++) {
        Message m = gen.next();
        auto bytes = encode_message(m);
        EXPECT_EQ(encode_message(m), bytes);
        Message back = decode_message(bytes);
        ASSERT_EQ(back, m) << "case " << i;
    }
}

TEST(Protocol, TruncatedPrefixesNeverDecode) {
    clockwork::testing::MessageGenerator gen(12);
    for (int i = 0; i < 300; i++) {
        auto bytes = encode_message(gen.next());
        for (std::size_t cut = 0; cut < bytes.size(); cut++) {
            EXPECT_THROW(decode_message(std::span(bytes).first(cut)), ProtocolError);
        }
    }
}

TEST(Protocol, RandomBytesNeverCrash) {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 20000; i++) {
        std::vector<std::uint8_t> junk(rng() % 64);
        for (auto& b : junk) b = static_cast<std::uint8_t>(rng());
        if (junk.size() >= 6 && rng() % 2) {
            auto len = le(junk.size() - 5 + (rng() % 3) - 1, 4);
            std::copy(len.begin(), len.end(), junk.begin());
        }
        try {
            Message m = decode_message(junk);
            EXPECT_EQ(encode_message(m), junk);
        } catch (const ProtocolError&) {
        }
    }
}
