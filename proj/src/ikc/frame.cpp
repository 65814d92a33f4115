#include "mksv/ikc/frame.hpp"

#include <cstring>

namespace mksv::ikc {

namespace {

void put_u16(std::vector<std::byte>& out, uint16_t v) {
    out.push_back(static_cast<std::byte>(v & 0xFF));
    out.push_back(static_cast<std::byte>((v >> 8) & 0xFF));
}

void put_u32(std::vector<std::byte>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<std::byte>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

uint16_t get_u16(std::span<const std::byte> in, size_t off) {
    return static_cast<uint16_t>(std::to_integer<uint16_t>(in[off]) |
                                 (std::to_integer<uint16_t>(in[off + 1]) << 8));
}

uint32_t get_u32(std::span<const std::byte> in, size_t off) {
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | std::to_integer<uint32_t>(in[off + i]);
    return v;
}

uint64_t get_u64(std::span<const std::byte> in, size_t off) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | std::to_integer<uint64_t>(in[off + i]);
    return v;
}

}  // namespace

const char* to_string(FrameKind kind) {
    switch (kind) {
        case FrameKind::CallRequest: return "call_request";
        case FrameKind::CallResponse: return "call_response";
        case FrameKind::CreditGrant: return "credit_grant";
        case FrameKind::BulkReady: return "bulk_ready";
        case FrameKind::BulkComplete: return "bulk_complete";
        case FrameKind::Command: return "command";
    }
    return "invalid";
}

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::BadFrame: return "bad_frame";
        case ErrorCode::PayloadTooLarge: return "payload_too_large";
        case ErrorCode::CrossesPageBoundary: return "crosses_page_boundary";
        case ErrorCode::FilterDenied: return "filter_denied";
        case ErrorCode::UnknownCall: return "unknown_call";
        case ErrorCode::BackendFailure: return "backend_failure";
        case ErrorCode::VmTerminated: return "vm_terminated";
        case ErrorCode::Timeout: return "timeout";
    }
    return "invalid";
}

Result<std::vector<std::byte>> encode_frame(const IkcFrame& frame) {
    if (frame.payload.size() > kInlinePayloadMax) {
        return ErrorCode::PayloadTooLarge;
    }
    std::vector<std::byte> out;
    out.reserve(kFrameHeaderSize + frame.payload.size());
    put_u16(out, kFrameMagic);
    out.push_back(static_cast<std::byte>(kFrameVersion));
    out.push_back(static_cast<std::byte>(frame.kind));
    put_u32(out, frame.uvm_id);
    put_u32(out, frame.thread_id);
    put_u16(out, static_cast<uint16_t>(frame.call_id));
    put_u16(out, frame.status);
    put_u64(out, frame.seq);
    put_u32(out, static_cast<uint32_t>(frame.payload.size()));
    put_u32(out, 0);  // reserved
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
    return out;
}

Result<IkcFrame> decode_frame(std::span<const std::byte> bytes) {
    if (bytes.size() < kFrameHeaderSize) return ErrorCode::BadFrame;
    if (get_u16(bytes, 0) != kFrameMagic) return ErrorCode::BadFrame;
    if (std::to_integer<uint8_t>(bytes[2]) != kFrameVersion) return ErrorCode::BadFrame;
    uint8_t kind = std::to_integer<uint8_t>(bytes[3]);
    if (kind > static_cast<uint8_t>(FrameKind::Command)) return ErrorCode::BadFrame;
    uint16_t call_code = get_u16(bytes, 12);
    if (!call_id_known(call_code)) return ErrorCode::BadFrame;
    uint32_t payload_len = get_u32(bytes, 24);
    if (payload_len > kInlinePayloadMax) return ErrorCode::BadFrame;
    if (bytes.size() != kFrameHeaderSize + payload_len) return ErrorCode::BadFrame;
    if (get_u32(bytes, 28) != 0) return ErrorCode::BadFrame;

    IkcFrame frame;
    frame.kind = static_cast<FrameKind>(kind);
    frame.uvm_id = get_u32(bytes, 4);
    frame.thread_id = get_u32(bytes, 8);
    frame.call_id = static_cast<CallId>(call_code);
    frame.status = get_u16(bytes, 14);
    frame.seq = get_u64(bytes, 16);
    frame.payload.assign(bytes.begin() + kFrameHeaderSize, bytes.end());
    return frame;
}

}  // namespace mksv::ikc
