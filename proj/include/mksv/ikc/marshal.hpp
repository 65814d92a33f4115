#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mksv/ikc/bulk.hpp"
#include "mksv/ikc/error.hpp"
#include "mksv/ikc/frame.hpp"

namespace mksv::ikc {

/// Marshaling format v1 for kernel calls forwarded over `send`:
///   byte 0 = op tag, then little-endian fixed fields per op, strings
///   16-bit length prefixed.
///
///   open      [1][flags u32][path_len u16][path]
///   close     [2][fd u32]
///   read      [3][fd u32][count u32][bulk u8]
///   write     [4][fd u32][len u32][bulk u8][data when inline]
///   lseek     [5][fd u32][offset i64][whence u8]
///   sock_send [6][len u32][bulk u8][data when inline]
///   sock_recv [7][count u32][bulk u8]
///   clock     [8]
///
/// Response payloads: open -> [fd u32]; read/sock_recv inline -> raw data,
/// bulk -> [actual u32] followed by a host-to-guest bulk push of that many
/// bytes; write/sock_send -> [accepted u32]; lseek -> [pos u64];
/// clock -> [ns u64]. Failures respond status=BackendFailure with an
/// errno-style [code u32] payload.
enum class OpTag : uint8_t {
    Open = 1,
    Close = 2,
    Read = 3,
    Write = 4,
    Lseek = 5,
    SockSend = 6,
    SockRecv = 7,
    Clock = 8,
};

// open() flag bits.
inline constexpr uint32_t kOpenRead = 1u << 0;
inline constexpr uint32_t kOpenWrite = 1u << 1;
inline constexpr uint32_t kOpenCreate = 1u << 2;
inline constexpr uint32_t kOpenTrunc = 1u << 3;
inline constexpr uint32_t kOpenAppend = 1u << 4;

struct MarshaledOp {
    OpTag tag = OpTag::Clock;
    uint32_t fd = 0;
    uint32_t count = 0;
    bool bulk = false;
    int64_t offset = 0;
    uint8_t whence = 0;
    uint32_t flags = 0;
    std::string path;
    std::vector<std::byte> data;
};

/// Largest inline data payload for ops that carry bytes; anything bigger
/// must take the bulk path. Header overhead comes out of the 192-byte
/// frame capacity.
size_t inline_data_capacity(OpTag tag);

Result<std::vector<std::byte>> marshal_op(const MarshaledOp& op);
Result<MarshaledOp> unmarshal_op(std::span<const std::byte> payload);

const char* op_name(OpTag tag);

// Little-endian scalar helpers shared by response payload packing.
void append_u32(std::vector<std::byte>& out, uint32_t v);
void append_u64(std::vector<std::byte>& out, uint64_t v);
Result<uint32_t> read_u32(std::span<const std::byte> in, size_t off);
Result<uint64_t> read_u64(std::span<const std::byte> in, size_t off);

/// Serializes bulk segment tables carried in push/pull kernel-call payloads:
/// [count u16] then per segment [offset u64][len u64].
Result<std::vector<std::byte>> encode_segments(std::span<const BulkSegment> segments);
Result<std::vector<BulkSegment>> decode_segments(std::span<const std::byte> payload);

/// BulkReady control-message metadata: the receiving side needs the transfer
/// size, not the sender's segment layout.
struct BulkReadyInfo {
    BulkDirection direction = BulkDirection::Push;
    uint64_t total_len = 0;
    uint32_t segment_count = 0;
};

std::vector<std::byte> encode_bulk_ready(const BulkReadyInfo& info);
Result<BulkReadyInfo> decode_bulk_ready(std::span<const std::byte> payload);

}  // namespace mksv::ikc
