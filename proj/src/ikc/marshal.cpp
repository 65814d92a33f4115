#include "mksv/ikc/marshal.hpp"

#include <cstring>

#include "mksv/ikc/bulk.hpp"

namespace mksv::ikc {

namespace {

void append_u8(std::vector<std::byte>& out, uint8_t v) {
    out.push_back(static_cast<std::byte>(v));
}

void append_u16(std::vector<std::byte>& out, uint16_t v) {
    out.push_back(static_cast<std::byte>(v & 0xFF));
    out.push_back(static_cast<std::byte>((v >> 8) & 0xFF));
}

Result<uint8_t> read_u8(std::span<const std::byte> in, size_t off) {
    if (off + 1 > in.size()) return ErrorCode::BadFrame;
    return std::to_integer<uint8_t>(in[off]);
}

Result<uint16_t> read_u16(std::span<const std::byte> in, size_t off) {
    if (off + 2 > in.size()) return ErrorCode::BadFrame;
    return static_cast<uint16_t>(std::to_integer<uint16_t>(in[off]) |
                                 (std::to_integer<uint16_t>(in[off + 1]) << 8));
}

}  // namespace

void append_u32(std::vector<std::byte>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

void append_u64(std::vector<std::byte>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

Result<uint32_t> read_u32(std::span<const std::byte> in, size_t off) {
    if (off + 4 > in.size()) return ErrorCode::BadFrame;
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | std::to_integer<uint32_t>(in[off + i]);
    return v;
}

Result<uint64_t> read_u64(std::span<const std::byte> in, size_t off) {
    if (off + 8 > in.size()) return ErrorCode::BadFrame;
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | std::to_integer<uint64_t>(in[off + i]);
    return v;
}

size_t inline_data_capacity(OpTag tag) {
    switch (tag) {
        case OpTag::Write: return kInlinePayloadMax - 10;     // tag + fd + len + bulk
        case OpTag::SockSend: return kInlinePayloadMax - 6;   // tag + len + bulk
        case OpTag::Read: return kInlinePayloadMax;           // response payload is raw data
        case OpTag::SockRecv: return kInlinePayloadMax;
        default: return kInlinePayloadMax;
    }
}

const char* op_name(OpTag tag) {
    switch (tag) {
        case OpTag::Open: return "open";
        case OpTag::Close: return "close";
        case OpTag::Read: return "read";
        case OpTag::Write: return "write";
        case OpTag::Lseek: return "lseek";
        case OpTag::SockSend: return "sock_send";
        case OpTag::SockRecv: return "sock_recv";
        case OpTag::Clock: return "clock";
    }
    return "invalid";
}

Result<std::vector<std::byte>> marshal_op(const MarshaledOp& op) {
    std::vector<std::byte> out;
    append_u8(out, static_cast<uint8_t>(op.tag));
    switch (op.tag) {
        case OpTag::Open:
            if (op.path.size() > UINT16_MAX) return ErrorCode::PayloadTooLarge;
            append_u32(out, op.flags);
            append_u16(out, static_cast<uint16_t>(op.path.size()));
            for (char c : op.path) out.push_back(static_cast<std::byte>(c));
            break;
        case OpTag::Close:
            append_u32(out, op.fd);
            break;
        case OpTag::Read:
            append_u32(out, op.fd);
            append_u32(out, op.count);
            append_u8(out, op.bulk ? 1 : 0);
            break;
        case OpTag::Write:
            append_u32(out, op.fd);
            append_u32(out, op.count);
            append_u8(out, op.bulk ? 1 : 0);
            if (!op.bulk) out.insert(out.end(), op.data.begin(), op.data.end());
            break;
        case OpTag::Lseek:
            append_u32(out, op.fd);
            append_u64(out, static_cast<uint64_t>(op.offset));
            append_u8(out, op.whence);
            break;
        case OpTag::SockSend:
            append_u32(out, op.count);
            append_u8(out, op.bulk ? 1 : 0);
            if (!op.bulk) out.insert(out.end(), op.data.begin(), op.data.end());
            break;
        case OpTag::SockRecv:
            append_u32(out, op.count);
            append_u8(out, op.bulk ? 1 : 0);
            break;
        case OpTag::Clock:
            break;
    }
    if (out.size() > kInlinePayloadMax) return ErrorCode::PayloadTooLarge;
    return out;
}

Result<MarshaledOp> unmarshal_op(std::span<const std::byte> payload) {
    auto tag_byte = read_u8(payload, 0);
    if (!tag_byte.ok()) return tag_byte.error();
    uint8_t raw_tag = tag_byte.value();
    if (raw_tag < 1 || raw_tag > 8) return ErrorCode::BadFrame;

    MarshaledOp op;
    op.tag = static_cast<OpTag>(raw_tag);
    switch (op.tag) {
        case OpTag::Open: {
            auto flags = read_u32(payload, 1);
            auto len = read_u16(payload, 5);
            if (!flags.ok() || !len.ok()) return ErrorCode::BadFrame;
            if (payload.size() != 7u + len.value()) return ErrorCode::BadFrame;
            op.flags = flags.value();
            op.path.resize(len.value());
            std::memcpy(op.path.data(), payload.data() + 7, len.value());
            break;
        }
        case OpTag::Close: {
            auto fd = read_u32(payload, 1);
            if (!fd.ok() || payload.size() != 5) return ErrorCode::BadFrame;
            op.fd = fd.value();
            break;
        }
        case OpTag::Read: {
            auto fd = read_u32(payload, 1);
            auto count = read_u32(payload, 5);
            auto bulk = read_u8(payload, 9);
            if (!fd.ok() || !count.ok() || !bulk.ok() || payload.size() != 10) {
                return ErrorCode::BadFrame;
            }
            op.fd = fd.value();
            op.count = count.value();
            op.bulk = bulk.value() != 0;
            break;
        }
        case OpTag::Write: {
            auto fd = read_u32(payload, 1);
            auto count = read_u32(payload, 5);
            auto bulk = read_u8(payload, 9);
            if (!fd.ok() || !count.ok() || !bulk.ok()) return ErrorCode::BadFrame;
            op.fd = fd.value();
            op.count = count.value();
            op.bulk = bulk.value() != 0;
            if (op.bulk) {
                if (payload.size() != 10) return ErrorCode::BadFrame;
            } else {
                if (payload.size() != 10u + op.count) return ErrorCode::BadFrame;
                op.data.assign(payload.begin() + 10, payload.end());
            }
            break;
        }
        case OpTag::Lseek: {
            auto fd = read_u32(payload, 1);
            auto offset = read_u64(payload, 5);
            auto whence = read_u8(payload, 13);
            if (!fd.ok() || !offset.ok() || !whence.ok() || payload.size() != 14) {
                return ErrorCode::BadFrame;
            }
            op.fd = fd.value();
            op.offset = static_cast<int64_t>(offset.value());
            op.whence = whence.value();
            break;
        }
        case OpTag::SockSend: {
            auto count = read_u32(payload, 1);
            auto bulk = read_u8(payload, 5);
            if (!count.ok() || !bulk.ok()) return ErrorCode::BadFrame;
            op.count = count.value();
            op.bulk = bulk.value() != 0;
            if (op.bulk) {
                if (payload.size() != 6) return ErrorCode::BadFrame;
            } else {
                if (payload.size() != 6u + op.count) return ErrorCode::BadFrame;
                op.data.assign(payload.begin() + 6, payload.end());
            }
            break;
        }
        case OpTag::SockRecv: {
            auto count = read_u32(payload, 1);
            auto bulk = read_u8(payload, 5);
            if (!count.ok() || !bulk.ok() || payload.size() != 6) return ErrorCode::BadFrame;
            op.count = count.value();
            op.bulk = bulk.value() != 0;
            break;
        }
        case OpTag::Clock:
            if (payload.size() != 1) return ErrorCode::BadFrame;
            break;
    }
    return op;
}

Result<std::vector<std::byte>> encode_segments(std::span<const BulkSegment> segments) {
    if (segments.size() > UINT16_MAX) return ErrorCode::PayloadTooLarge;
    std::vector<std::byte> out;
    out.reserve(2 + segments.size() * 16);
    out.push_back(static_cast<std::byte>(segments.size() & 0xFF));
    out.push_back(static_cast<std::byte>((segments.size() >> 8) & 0xFF));
    for (const auto& seg : segments) {
        append_u64(out, seg.offset);
        append_u64(out, seg.length);
    }
    return out;
}

Result<std::vector<BulkSegment>> decode_segments(std::span<const std::byte> payload) {
    auto count = read_u16(payload, 0);
    if (!count.ok()) return ErrorCode::BadFrame;
    if (payload.size() != 2u + static_cast<size_t>(count.value()) * 16) {
        return ErrorCode::BadFrame;
    }
    std::vector<BulkSegment> segments(count.value());
    for (size_t i = 0; i < segments.size(); ++i) {
        auto off = read_u64(payload, 2 + i * 16);
        auto len = read_u64(payload, 2 + i * 16 + 8);
        if (!off.ok() || !len.ok()) return ErrorCode::BadFrame;
        segments[i] = BulkSegment{off.value(), len.value()};
    }
    return segments;
}

std::vector<std::byte> encode_bulk_ready(const BulkReadyInfo& info) {
    std::vector<std::byte> out;
    out.reserve(13);
    out.push_back(static_cast<std::byte>(info.direction));
    append_u64(out, info.total_len);
    append_u32(out, info.segment_count);
    return out;
}

Result<BulkReadyInfo> decode_bulk_ready(std::span<const std::byte> payload) {
    if (payload.size() != 13) return ErrorCode::BadFrame;
    auto dir = std::to_integer<uint8_t>(payload[0]);
    if (dir > 1) return ErrorCode::BadFrame;
    auto total = read_u64(payload, 1);
    auto count = read_u32(payload, 9);
    if (!total.ok() || !count.ok()) return ErrorCode::BadFrame;
    BulkReadyInfo info;
    info.direction = static_cast<BulkDirection>(dir);
    info.total_len = total.value();
    info.segment_count = count.value();
    return info;
}

}  // namespace mksv::ikc
