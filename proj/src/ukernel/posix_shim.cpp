#include "mksv/ukernel/posix_shim.hpp"

#include <algorithm>
#include <cstring>

#include "mksv/ukernel/user_vm.hpp"

namespace mksv::uk {

using ikc::MarshaledOp;
using ikc::OpTag;

PosixIo::PosixIo(GuestApi& api, StdioMode stdio_mode) : api_(api), stdio_mode_(stdio_mode) {}

Result<GuestApi::RemoteReply> PosixIo::roundtrip(const MarshaledOp& op) {
    auto payload = ikc::marshal_op(op);
    if (!payload.ok()) {
        last_errno_ = EMSGSIZE;
        return payload.error();
    }
    auto reply = api_.call_remote(payload.value());
    if (!reply.ok()) return reply.error();
    if (reply.value().status == static_cast<uint16_t>(ErrorCode::BackendFailure)) {
        auto code = ikc::read_u32(reply.value().payload, 0);
        last_errno_ = code.ok() ? static_cast<int>(code.value()) : EIO;
    }
    return reply;
}

Result<uint64_t> PosixIo::ensure_staging(size_t len) {
    if (staging_len_ >= len && staging_base_ != 0) return staging_base_;
    if (staging_base_ != 0) {
        auto released = api_.munmap(staging_base_, staging_len_);
        if (!released.ok()) return released.error();
        staging_base_ = 0;
        staging_len_ = 0;
    }
    auto base = api_.mmap(len);
    if (!base.ok()) return base.error();
    staging_base_ = base.value();
    staging_len_ = (len + ikc::kGuestPageSize - 1) / ikc::kGuestPageSize * ikc::kGuestPageSize;
    return staging_base_;
}

Result<size_t> PosixIo::read(int fd, std::span<std::byte> buf) {
    if (buf.empty()) return static_cast<size_t>(0);
    if (fd == 0 || gateway_fds_.count(fd) != 0) return read_stdin(buf);
    if (fd == 1 || fd == 2) {
        last_errno_ = EBADF;
        return ErrorCode::BackendFailure;
    }
    return read_backend(static_cast<uint32_t>(fd), buf, false);
}

Result<size_t> PosixIo::write(int fd, std::span<const std::byte> data) {
    if (data.empty()) return static_cast<size_t>(0);
    if (fd == 1 || fd == 2 || gateway_fds_.count(fd) != 0) {
        return write_backend(0, data, true);
    }
    if (fd == 0) {
        last_errno_ = EBADF;
        return ErrorCode::BackendFailure;
    }
    return write_backend(static_cast<uint32_t>(fd), data, false);
}

Result<size_t> PosixIo::read_exact(int fd, std::span<std::byte> buf) {
    size_t got = 0;
    while (got < buf.size()) {
        auto n = read(fd, buf.subspan(got));
        if (!n.ok()) return n.error();
        if (n.value() == 0) {
            if (got == 0) return static_cast<size_t>(0);  // clean EOF
            last_errno_ = EIO;
            return ErrorCode::BackendFailure;  // truncated stream
        }
        got += n.value();
    }
    return got;
}

Result<size_t> PosixIo::read_stdin(std::span<std::byte> buf) {
    // serve staged leftovers first
    if (!stdin_pending_.empty()) {
        size_t n = std::min(buf.size(), stdin_pending_.size());
        for (size_t i = 0; i < n; ++i) {
            buf[i] = stdin_pending_.front();
            stdin_pending_.pop_front();
        }
        return n;
    }
    if (stdin_eof_) return static_cast<size_t>(0);

    if (stdio_mode_ == StdioMode::Stream) {
        auto message = api_.recv();
        if (!message.ok()) return message.error();
        if (message.value().empty()) {
            stdin_eof_ = true;
            return static_cast<size_t>(0);
        }
        auto& bytes = message.value();
        size_t n = std::min(buf.size(), bytes.size());
        std::memcpy(buf.data(), bytes.data(), n);
        stdin_pending_.insert(stdin_pending_.end(), bytes.begin() + n, bytes.end());
        return n;
    }
    return read_backend(0, buf, true);
}

Result<size_t> PosixIo::read_backend(uint32_t fd, std::span<std::byte> buf, bool sock) {
    MarshaledOp op;
    op.tag = sock ? OpTag::SockRecv : OpTag::Read;
    op.fd = fd;
    op.count = static_cast<uint32_t>(buf.size());
    op.bulk = buf.size() > ikc::inline_data_capacity(op.tag);

    uint64_t staging = 0;
    if (op.bulk) {
        // Validate the pull descriptor before any traffic so strict-page
        // violations fail fast without leaving the service mid-transfer.
        auto base = ensure_staging(buf.size());
        if (!base.ok()) return base.error();
        staging = base.value();
        ikc::BulkSegment seg{staging, buf.size()};
        auto desc = ikc::bulk_prepare(ikc::BulkDirection::Pull, std::span(&seg, 1),
                                      api_.strict_page_mode(), api_.image().size());
        if (!desc.ok()) return desc.error();
    }

    auto reply = roundtrip(op);
    if (!reply.ok()) return reply.error();
    if (reply.value().status != ikc::kStatusOk) {
        return static_cast<ErrorCode>(reply.value().status);
    }

    if (!op.bulk) {
        const auto& data = reply.value().payload;
        if (data.empty()) {
            if (sock) stdin_eof_ = true;
            return static_cast<size_t>(0);
        }
        std::memcpy(buf.data(), data.data(), std::min(buf.size(), data.size()));
        return std::min(buf.size(), data.size());
    }

    auto actual = ikc::read_u32(reply.value().payload, 0);
    if (!actual.ok()) return actual.error();
    if (actual.value() == 0) {
        if (sock) stdin_eof_ = true;
        return static_cast<size_t>(0);
    }
    ikc::BulkSegment seg{staging, actual.value()};
    auto pulled = api_.pull(std::span(&seg, 1));
    if (!pulled.ok()) return pulled.error();
    std::memcpy(buf.data(), api_.image().data() + staging, actual.value());
    return static_cast<size_t>(actual.value());
}

Result<size_t> PosixIo::write_backend(uint32_t fd, std::span<const std::byte> data, bool sock) {
    MarshaledOp op;
    op.tag = sock ? OpTag::SockSend : OpTag::Write;
    op.fd = fd;
    op.count = static_cast<uint32_t>(data.size());
    op.bulk = data.size() > ikc::inline_data_capacity(op.tag);

    uint64_t staging = 0;
    if (op.bulk) {
        auto base = ensure_staging(data.size());
        if (!base.ok()) return base.error();
        staging = base.value();
        ikc::BulkSegment seg{staging, data.size()};
        auto desc = ikc::bulk_prepare(ikc::BulkDirection::Push, std::span(&seg, 1),
                                      api_.strict_page_mode(), api_.image().size());
        if (!desc.ok()) return desc.error();
        std::memcpy(api_.image().data() + staging, data.data(), data.size());
    } else {
        op.data.assign(data.begin(), data.end());
    }

    auto reply = roundtrip(op);
    if (!reply.ok()) return reply.error();
    if (reply.value().status != ikc::kStatusOk) {
        return static_cast<ErrorCode>(reply.value().status);
    }

    if (op.bulk) {
        ikc::BulkSegment seg{staging, data.size()};
        auto pushed = api_.push(std::span(&seg, 1));
        if (!pushed.ok()) return pushed.error();
        return static_cast<size_t>(pushed.value());
    }
    auto accepted = ikc::read_u32(reply.value().payload, 0);
    if (!accepted.ok()) return accepted.error();
    return static_cast<size_t>(accepted.value());
}

Result<int> PosixIo::open(std::string_view path, uint32_t flags) {
    MarshaledOp op;
    op.tag = OpTag::Open;
    op.flags = flags;
    op.path.assign(path);
    auto reply = roundtrip(op);
    if (!reply.ok()) return reply.error();
    if (reply.value().status != ikc::kStatusOk) {
        return static_cast<ErrorCode>(reply.value().status);
    }
    auto fd = ikc::read_u32(reply.value().payload, 0);
    if (!fd.ok()) return fd.error();
    return static_cast<int>(fd.value());
}

Result<void> PosixIo::close(int fd) {
    if (gateway_fds_.erase(fd) != 0) return {};
    MarshaledOp op;
    op.tag = OpTag::Close;
    op.fd = static_cast<uint32_t>(fd);
    auto reply = roundtrip(op);
    if (!reply.ok()) return reply.error();
    if (reply.value().status != ikc::kStatusOk) {
        return static_cast<ErrorCode>(reply.value().status);
    }
    return {};
}

Result<uint64_t> PosixIo::lseek(int fd, int64_t offset, uint8_t whence) {
    MarshaledOp op;
    op.tag = OpTag::Lseek;
    op.fd = static_cast<uint32_t>(fd);
    op.offset = offset;
    op.whence = whence;
    auto reply = roundtrip(op);
    if (!reply.ok()) return reply.error();
    if (reply.value().status != ikc::kStatusOk) {
        return static_cast<ErrorCode>(reply.value().status);
    }
    return ikc::read_u64(reply.value().payload, 0);
}

Result<int> PosixIo::socket_gateway() {
    int fd = next_gateway_fd_++;
    gateway_fds_.insert(fd);
    return fd;
}

Result<uint64_t> PosixIo::clock_gettime_ns() {
    return api_.gettime_ns();
}

Result<void> PosixIo::nanosleep_ns(uint64_t ns) {
    return api_.sleep_ns(ns);
}

Result<Tid> PosixIo::thread_create(std::function<int(GuestApi&)> entry) {
    return api_.create_thread(std::move(entry));
}

Result<int> PosixIo::thread_join(Tid tid) {
    return api_.join_thread(tid);
}

}  // namespace mksv::uk
