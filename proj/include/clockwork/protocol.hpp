#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "clockwork/time.hpp"

namespace clockwork {

// Wire format
// -----------
// Every message is one frame:
//
//   u32 payload_length | u8 tag | payload (payload_length bytes)
//
// All integers are little-endian and fixed width, fields appear in the order
// listed below, and there is no padding. Tags: 1=WorkerHandshake, 2=Action,
// 3=ActionResult, 4=InferenceRequest, 5=InferenceResponse.
//
//   WorkerHandshake   u32 worker_id | u32 gpu_count | gpu_count x u32 pages_total
//                     | u32 n | n x u32 model_id
//   Action            u64 action_id | u8 kind | u32 model_id | i64 earliest
//                     | i64 latest | u16 gpu | u16 batch_size
//                     then, unless kind is Unload: i64 expected_duration
//                     then, if kind is Infer: u32 n | n x u64 request_id
//                                             | u32 m | m bytes opaque input
//   ActionResult      u64 action_id | u8 status | i64 start | i64 end
//                     | i64 device_duration
//   InferenceRequest  u64 request_id | u32 model_id | i64 slo | i64 arrival
//                     | u32 input_size
//   InferenceResponse u64 request_id | u8 status | i64 latency | u8 cold_start
//
// An Unload therefore occupies 4 + 1 + 33 = 38 bytes on the wire.

enum class MessageTag : std::uint8_t {
    Handshake = 1,
    Action = 2,
    ActionResult = 3,
    InferenceRequest = 4,
    InferenceResponse = 5,
};

enum class ActionKind : std::uint8_t { Load = 1, Unload = 2, Infer = 3 };

enum class ActionStatus : std::uint8_t {
    Success = 0,
    RejectedTooLate = 1,
    OutOfPages = 2,
    ModelNotLoaded = 3,
    MalformedAction = 4,
};

enum class ResponseStatus : std::uint8_t { Ok = 0, Denied = 1, Timeout = 2 };

const char* to_string(ActionKind kind);
const char* to_string(ActionStatus status);
const char* to_string(ResponseStatus status);

struct Action {
    ActionId id = 0;
    ActionKind kind = ActionKind::Infer;
    ModelId model_id = 0;
    std::uint16_t gpu = 0;
    TimePoint earliest = 0;
    TimePoint latest = 0;
    std::uint16_t batch_size = 0;     // Infer only
    std::vector<RequestId> batch;     // Infer only
    Duration expected_duration = 0;   // controller prediction, telemetry only
    std::vector<std::uint8_t> input;  // opaque payload; empty unless wire-stressing

    bool operator==(const Action&) const = default;
};

struct ActionResult {
    ActionId action_id = 0;
    ActionStatus status = ActionStatus::Success;
    TimePoint start = 0;
    TimePoint end = 0;
    Duration device_duration = 0;

    bool operator==(const ActionResult&) const = default;
};

struct InferenceRequest {
    RequestId id = 0;
    ModelId model_id = 0;
    Duration slo = 0;
    TimePoint arrival = 0;  // stamped by the controller
    std::uint32_t input_size = 0;

    bool operator==(const InferenceRequest&) const = default;
};

struct InferenceResponse {
    RequestId id = 0;
    ResponseStatus status = ResponseStatus::Ok;
    Duration latency = 0;
    bool cold_start = false;

    bool operator==(const InferenceResponse&) const = default;
};

struct WorkerHandshake {
    std::uint32_t worker_id = 0;
    std::uint32_t gpu_count = 0;
    std::vector<std::uint32_t> pages_total;  // one per GPU
    std::vector<ModelId> models_resident;    // host-resident models

    bool operator==(const WorkerHandshake&) const = default;
};

using Message =
    std::variant<WorkerHandshake, Action, ActionResult, InferenceRequest, InferenceResponse>;

class ProtocolError : public std::runtime_error {
public:
    enum class Kind { Truncated, UnknownTag, LengthMismatch, Invariant };

    ProtocolError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

constexpr std::size_t kFrameHeaderBytes = 5;

std::vector<std::uint8_t> encode_message(const Message& message);
void encode_message(const Message& message, std::vector<std::uint8_t>& out);

// Decodes exactly one frame. Throws ProtocolError on truncation, unknown
// tags, trailing bytes and invariant violations.
Message decode_message(std::span<const std::uint8_t> frame);

// Size of the first frame in `buffer` if it is complete.
std::optional<std::size_t> complete_frame_size(std::span<const std::uint8_t> buffer);

// Throws ProtocolError(Invariant) when a message breaks its invariants.
void check_invariants(const Message& message);

}  // namespace clockwork
