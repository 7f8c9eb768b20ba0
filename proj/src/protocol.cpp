#include "clockwork/protocol.hpp"

#include <cstring>
#include <limits>
#include <type_traits>

namespace clockwork {

const char* to_string(ActionKind kind) {
    switch (kind) {
        case ActionKind::Load: return "load";
        case ActionKind::Unload: return "unload";
        case ActionKind::Infer: return "infer";
    }
    return "?";
}

const char* to_string(ActionStatus status) {
    switch (status) {
        case ActionStatus::Success: return "success";
        case ActionStatus::RejectedTooLate: return "rejected_too_late";
        case ActionStatus::OutOfPages: return "out_of_pages";
        case ActionStatus::ModelNotLoaded: return "model_not_loaded";
        case ActionStatus::MalformedAction: return "malformed_action";
    }
    return "?";
}

const char* to_string(ResponseStatus status) {
    switch (status) {
        case ResponseStatus::Ok: return "ok";
        case ResponseStatus::Denied: return "denied";
        case ResponseStatus::Timeout: return "timeout";
    }
    return "?";
}

namespace {

class Writer {
public:
    explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

    template <typename T>
    void put(T value) {
        static_assert(std::is_integral_v<T>);
        using U = std::make_unsigned_t<T>;
        auto u = static_cast<U>(value);
        for (std::size_t i = 0; i < sizeof(T); i++) {
            out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
        }
    }

    void bytes(const std::vector<std::uint8_t>& b) { out_.insert(out_.end(), b.begin(), b.end()); }

private:
    std::vector<std::uint8_t>& out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    template <typename T>
    T get() {
        static_assert(std::is_integral_v<T>);
        need(sizeof(T));
        using U = std::make_unsigned_t<T>;
        U u = 0;
        for (std::size_t i = 0; i < sizeof(T); i++) {
            u |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
        }
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }

    std::vector<std::uint8_t> bytes(std::size_t n) {
        need(n);
        std::vector<std::uint8_t> out(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                      in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }

    // Guards element counts against the bytes actually present before
    // allocating.
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) {
            throw ProtocolError(ProtocolError::Kind::Truncated, "payload ends inside a field");
        }
    }

    std::size_t remaining() const { return in_.size() - pos_; }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

[[noreturn]] void broken(const std::string& what) {
    throw ProtocolError(ProtocolError::Kind::Invariant, what);
}

void write_payload(Writer& w, const WorkerHandshake& m) {
    w.put<std::uint32_t>(m.worker_id);
    w.put<std::uint32_t>(m.gpu_count);
    for (auto p : m.pages_total) w.put<std::uint32_t>(p);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.models_resident.size()));
    for (auto id : m.models_resident) w.put<std::uint32_t>(id);
}

void write_payload(Writer& w, const Action& m) {
    w.put<std::uint64_t>(m.id);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(m.kind));
    w.put<std::uint32_t>(m.model_id);
    w.put<std::int64_t>(m.earliest);
    w.put<std::int64_t>(m.latest);
    w.put<std::uint16_t>(m.gpu);
    w.put<std::uint16_t>(m.batch_size);
    if (m.kind != ActionKind::Unload) w.put<std::int64_t>(m.expected_duration);
    if (m.kind == ActionKind::Infer) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(m.batch.size()));
        for (auto id : m.batch) w.put<std::uint64_t>(id);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(m.input.size()));
        w.bytes(m.input);
    }
}

void write_payload(Writer& w, const ActionResult& m) {
    w.put<std::uint64_t>(m.action_id);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(m.status));
    w.put<std::int64_t>(m.start);
    w.put<std::int64_t>(m.end);
    w.put<std::int64_t>(m.device_duration);
}

void write_payload(Writer& w, const InferenceRequest& m) {
    w.put<std::uint64_t>(m.id);
    w.put<std::uint32_t>(m.model_id);
    w.put<std::int64_t>(m.slo);
    w.put<std::int64_t>(m.arrival);
    w.put<std::uint32_t>(m.input_size);
}

void write_payload(Writer& w, const InferenceResponse& m) {
    w.put<std::uint64_t>(m.id);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(m.status));
    w.put<std::int64_t>(m.latency);
    w.put<std::uint8_t>(m.cold_start ? 1 : 0);
}

MessageTag tag_of(const Message& m) {
    return static_cast<MessageTag>(m.index() + 1);
}

WorkerHandshake read_handshake(Reader& r) {
    WorkerHandshake m;
    m.worker_id = r.get<std::uint32_t>();
    m.gpu_count = r.get<std::uint32_t>();
    r.need(static_cast<std::size_t>(m.gpu_count) * 4);
    m.pages_total.resize(m.gpu_count);
    for (auto& p : m.pages_total) p = r.get<std::uint32_t>();
    auto n = r.get<std::uint32_t>();
    r.need(static_cast<std::size_t>(n) * 4);
    m.models_resident.resize(n);
    for (auto& id : m.models_resident) id = r.get<std::uint32_t>();
    return m;
}

Action read_action(Reader& r) {
    Action m;
    m.id = r.get<std::uint64_t>();
    auto kind = r.get<std::uint8_t>();
    if (kind < 1 || kind > 3) broken("unknown action kind " + std::to_string(kind));
    m.kind = static_cast<ActionKind>(kind);
    m.model_id = r.get<std::uint32_t>();
    m.earliest = r.get<std::int64_t>();
    m.latest = r.get<std::int64_t>();
    m.gpu = r.get<std::uint16_t>();
    m.batch_size = r.get<std::uint16_t>();
    if (m.kind != ActionKind::Unload) m.expected_duration = r.get<std::int64_t>();
    if (m.kind == ActionKind::Infer) {
        auto n = r.get<std::uint32_t>();
        r.need(static_cast<std::size_t>(n) * 8);
        m.batch.resize(n);
        for (auto& id : m.batch) id = r.get<std::uint64_t>();
        auto bytes = r.get<std::uint32_t>();
        m.input = r.bytes(bytes);
    }
    return m;
}

ActionResult read_result(Reader& r) {
    ActionResult m;
    m.action_id = r.get<std::uint64_t>();
    auto status = r.get<std::uint8_t>();
    if (status > 4) broken("unknown action status " + std::to_string(status));
    m.status = static_cast<ActionStatus>(status);
    m.start = r.get<std::int64_t>();
    m.end = r.get<std::int64_t>();
    m.device_duration = r.get<std::int64_t>();
    return m;
}

InferenceRequest read_request(Reader& r) {
    InferenceRequest m;
    m.id = r.get<std::uint64_t>();
    m.model_id = r.get<std::uint32_t>();
    m.slo = r.get<std::int64_t>();
    m.arrival = r.get<std::int64_t>();
    m.input_size = r.get<std::uint32_t>();
    return m;
}

InferenceResponse read_response(Reader& r) {
    InferenceResponse m;
    m.id = r.get<std::uint64_t>();
    auto status = r.get<std::uint8_t>();
    if (status > 2) broken("unknown response status " + std::to_string(status));
    m.status = static_cast<ResponseStatus>(status);
    m.latency = r.get<std::int64_t>();
    auto cold = r.get<std::uint8_t>();
    if (cold > 1) broken("cold_start flag must be 0 or 1");
    m.cold_start = cold == 1;
    return m;
}

}  // namespace

void check_invariants(const Message& message) {
    std::visit(
        [](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Action>) {
                if (m.earliest > m.latest) broken("action earliest > latest");
                if (m.kind == ActionKind::Infer) {
                    if (m.batch_size == 0) broken("infer with batch_size 0");
                    if (m.batch.size() != m.batch_size) {
                        broken("infer batch_size " + std::to_string(m.batch_size) + " but " +
                               std::to_string(m.batch.size()) + " request ids");
                    }
                } else {
                    if (m.batch_size != 0 || !m.batch.empty()) broken("load/unload carries a batch");
                    if (!m.input.empty()) broken("load/unload carries input bytes");
                }
                if (m.kind == ActionKind::Unload && m.expected_duration != 0) {
                    broken("unload carries an expected duration");
                }
            } else if constexpr (std::is_same_v<T, ActionResult>) {
                if (m.status == ActionStatus::Success) {
                    if (m.end < m.start) broken("successful result ends before it starts");
                } else if (m.device_duration != 0) {
                    broken("failed result reports device time");
                }
            } else if constexpr (std::is_same_v<T, WorkerHandshake>) {
                if (m.pages_total.size() != m.gpu_count) broken("pages_total per GPU mismatch");
                for (auto p : m.pages_total) {
                    if (p == 0) broken("handshake with zero pages");
                }
            }
        },
        message);
}

void encode_message(const Message& message, std::vector<std::uint8_t>& out) {
    std::size_t start = out.size();
    Writer w(out);
    w.put<std::uint32_t>(0);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(tag_of(message)));
    std::visit([&](const auto& m) { write_payload(w, m); }, message);
    auto length = static_cast<std::uint32_t>(out.size() - start - kFrameHeaderBytes);
    for (std::size_t i = 0; i < 4; i++) out[start + i] = static_cast<std::uint8_t>(length >> (8 * i));
}

std::vector<std::uint8_t> encode_message(const Message& message) {
    std::vector<std::uint8_t> out;
    encode_message(message, out);
    return out;
}

std::optional<std::size_t> complete_frame_size(std::span<const std::uint8_t> buffer) {
    if (buffer.size() < kFrameHeaderBytes) return std::nullopt;
    std::uint32_t length = 0;
    for (std::size_t i = 0; i < 4; i++) length |= static_cast<std::uint32_t>(buffer[i]) << (8 * i);
    std::size_t total = kFrameHeaderBytes + length;
    if (buffer.size() < total) return std::nullopt;
    return total;
}

Message decode_message(std::span<const std::uint8_t> frame) {
    if (frame.size() < kFrameHeaderBytes) {
        throw ProtocolError(ProtocolError::Kind::Truncated, "frame shorter than its header");
    }
    std::uint32_t length = 0;
    for (std::size_t i = 0; i < 4; i++) length |= static_cast<std::uint32_t>(frame[i]) << (8 * i);
    std::size_t available = frame.size() - kFrameHeaderBytes;
    if (available < length) {
        throw ProtocolError(ProtocolError::Kind::Truncated,
                            "frame declares " + std::to_string(length) + " payload bytes, has " +
                                std::to_string(available));
    }
    if (available > length) {
        throw ProtocolError(ProtocolError::Kind::LengthMismatch,
                            std::to_string(available - length) + " trailing bytes after frame");
    }

    Reader r(frame.subspan(kFrameHeaderBytes));
    Message message;
    switch (static_cast<MessageTag>(frame[4])) {
        case MessageTag::Handshake: message = read_handshake(r); break;
        case MessageTag::Action: message = read_action(r); break;
        case MessageTag::ActionResult: message = read_result(r); break;
        case MessageTag::InferenceRequest: message = read_request(r); break;
        case MessageTag::InferenceResponse: message = read_response(r); break;
        default:
            throw ProtocolError(ProtocolError::Kind::UnknownTag,
                                "unknown message tag " + std::to_string(frame[4]));
    }
    if (r.remaining() != 0) {
        throw ProtocolError(ProtocolError::Kind::LengthMismatch,
                            "payload longer than its fields by " + std::to_string(r.remaining()));
    }
    check_invariants(message);
    return message;
}

}  // namespace clockwork
