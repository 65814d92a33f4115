#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mksv/ikc/call_id.hpp"
#include "mksv/ikc/error.hpp"

namespace mksv::ikc {

enum class FrameKind : uint8_t {
    CallRequest = 0,
    CallResponse = 1,
    CreditGrant = 2,
    BulkReady = 3,
    BulkComplete = 4,
    Command = 5,
};

const char* to_string(FrameKind kind);

inline constexpr uint16_t kFrameMagic = 0x4E56;
inline constexpr uint8_t kFrameVersion = 1;
inline constexpr size_t kFrameHeaderSize = 32;
inline constexpr size_t kInlinePayloadMax = 192;

/// Wire destination meaning "any thread of the addressed context". Used for
/// unsolicited inbound stream data, which has no single reader.
inline constexpr uint32_t kAnyThreadId = 0xFFFFFFFFu;

/// One unit of inter-kernel control traffic. The 32-byte header layout is
/// fixed little-endian:
///
///   off 0  magic      u16   0x4E56
///   off 2  version    u8    1
///   off 3  kind       u8
///   off 4  uvm_id     u32
///   off 8  thread_id  u32
///   off 12 call_id    u16
///   off 14 status     u16   0 = OK, else ErrorCode
///   off 16 seq        u64
///   off 24 payload_len u32  <= 192
///   off 28 reserved   u32   must be zero
///   off 32 payload    payload_len bytes
struct IkcFrame {
    FrameKind kind = FrameKind::CallRequest;
    uint32_t uvm_id = 0;
    uint32_t thread_id = 0;
    CallId call_id = CallId::kGetpid;
    uint16_t status = kStatusOk;
    uint64_t seq = 0;
    std::vector<std::byte> payload;

    bool operator==(const IkcFrame&) const = default;
};

/// Serializes a frame. Fails with PayloadTooLarge if the payload exceeds the
/// inline capacity; every other field is total.
Result<std::vector<std::byte>> encode_frame(const IkcFrame& frame);

/// Total decoder: any input either yields a frame or BadFrame, never a
/// partial result. The buffer must hold exactly header + declared payload.
Result<IkcFrame> decode_frame(std::span<const std::byte> bytes);

}  // namespace mksv::ikc
