#pragma once

#include <cerrno>
#include <deque>
#include <optional>
#include <set>
#include <span>
#include <string_view>

#include "mksv/ikc/marshal.hpp"
#include "mksv/ukernel/guest_context.hpp"

namespace mksv::uk {

struct Manifest;
enum class StdioMode : uint8_t;

/// Userspace POSIX compatibility layer. Each call maps to a fixed kernel-
/// call sequence, a pure function of (call, args, size threshold):
///   read/write on fd 0/1/2  -> recv / sock_send (Stream stdio) or
///                              sock_recv / sock_send (Pull stdio)
///   read/write on fd >= 3   -> marshaled read/write over send, escalating
///                              to pull/push when the data exceeds the
///                              inline capacity
///   open/close/lseek        -> marshaled ops over send
///   clock_gettime/nanosleep -> local gettime / sleep
///   thread & sync calls     -> local kernel calls
/// Unsupported calls fail with BackendFailure and last_errno() == ENOSYS,
/// never silently.
class PosixIo {
  public:
    PosixIo(GuestApi& api, StdioMode stdio_mode);

    Result<size_t> read(int fd, std::span<std::byte> buf);
    Result<size_t> write(int fd, std::span<const std::byte> data);
    Result<size_t> read_exact(int fd, std::span<std::byte> buf);  // EOF mid-way -> EIO
    Result<int> open(std::string_view path, uint32_t flags);
    Result<void> close(int fd);
    Result<uint64_t> lseek(int fd, int64_t offset, uint8_t whence);

    /// Allocates a guest fd aliased to the gateway byte stream (the
    /// accept-equivalent); reads and writes on it follow the stdio paths.
    Result<int> socket_gateway();

    Result<uint64_t> clock_gettime_ns();
    Result<void> nanosleep_ns(uint64_t ns);

    Result<Tid> thread_create(std::function<int(GuestApi&)> entry);
    Result<int> thread_join(Tid tid);
    Result<void> mutex_lock(uint64_t id) { return api_.mutex_lock(id); }
    Result<void> mutex_unlock(uint64_t id) { return api_.mutex_unlock(id); }
    Result<void> cond_wait(uint64_t c, uint64_t m) { return api_.cond_wait(c, m); }
    Result<void> cond_signal(uint64_t c) { return api_.cond_signal(c); }

    /// errno-style detail for the last BackendFailure result.
    int last_errno() const { return last_errno_; }

  private:
    Result<size_t> read_stdin(std::span<std::byte> buf);
    Result<size_t> read_backend(uint32_t fd, std::span<std::byte> buf, bool sock);
    Result<size_t> write_backend(uint32_t fd, std::span<const std::byte> data, bool sock);
    Result<uint64_t> ensure_staging(size_t len);
    Result<GuestApi::RemoteReply> roundtrip(const ikc::MarshaledOp& op);

    GuestApi& api_;
    StdioMode stdio_mode_;
    int last_errno_ = 0;

    std::deque<std::byte> stdin_pending_;
    bool stdin_eof_ = false;

    // image staging region for bulk transfers of host-side buffers
    uint64_t staging_base_ = 0;
    size_t staging_len_ = 0;

    int next_gateway_fd_ = 1000;
    std::set<int> gateway_fds_;
};

}  // namespace mksv::uk
