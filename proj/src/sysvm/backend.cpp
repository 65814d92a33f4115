#include "mksv/sysvm/backend.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>

#include "mksv/ikc/marshal.hpp"

namespace mksv::svc {

namespace {

int open_flags_to_host(uint32_t flags) {
    int host = 0;
    bool rd = (flags & ikc::kOpenRead) != 0;
    bool wr = (flags & ikc::kOpenWrite) != 0;
    if (rd && wr) {
        host = O_RDWR;
    } else if (wr) {
        host = O_WRONLY;
    } else {
        host = O_RDONLY;
    }
    if ((flags & ikc::kOpenCreate) != 0) host |= O_CREAT;
    if ((flags & ikc::kOpenTrunc) != 0) host |= O_TRUNC;
    if ((flags & ikc::kOpenAppend) != 0) host |= O_APPEND;
    return host;
}

}  // namespace

HostBackend::HostBackend(std::filesystem::path scratch_root)
    : scratch_root_(std::move(scratch_root)) {
    std::error_code ec;
    std::filesystem::create_directories(scratch_root_, ec);
}

HostBackend::~HostBackend() {
    for (auto& [fd, host_fd] : fds_) ::close(host_fd);
}

HostBackend::IoResult<std::filesystem::path> HostBackend::resolve(std::string_view path) const {
    std::filesystem::path rel(path);
    if (rel.is_absolute()) rel = rel.relative_path();
    for (const auto& part : rel) {
        if (part == "..") return EACCES;
    }
    return scratch_root_ / rel;
}

HostBackend::IoResult<uint32_t> HostBackend::open(std::string_view path, uint32_t flags) {
    auto resolved = resolve(path);
    if (!resolved.ok()) return resolved.error();
    int host_fd = ::open(resolved.value().c_str(), open_flags_to_host(flags), 0644);
    if (host_fd < 0) return errno;
    uint32_t fd = next_fd_++;
    fds_[fd] = host_fd;
    return fd;
}

HostBackend::IoResult<void> HostBackend::close(uint32_t fd) {
    auto it = fds_.find(fd);
    if (it == fds_.end()) return EBADF;
    ::close(it->second);
    fds_.erase(it);
    return {};
}

HostBackend::IoResult<std::vector<std::byte>> HostBackend::read(uint32_t fd, size_t count) {
    auto it = fds_.find(fd);
    if (it == fds_.end()) return EBADF;
    std::vector<std::byte> out(count);
    size_t got = 0;
    while (got < count) {
        ssize_t n = ::read(it->second, out.data() + got, count - got);
        if (n < 0) {
            if (errno == EINTR) continue;
            return errno;
        }
        if (n == 0) break;
        got += static_cast<size_t>(n);
    }
    out.resize(got);
    return out;
}

HostBackend::IoResult<uint32_t> HostBackend::write(uint32_t fd, std::span<const std::byte> data) {
    auto it = fds_.find(fd);
    if (it == fds_.end()) return EBADF;
    size_t sent = 0;
    while (sent < data.size()) {
        ssize_t n = ::write(it->second, data.data() + sent, data.size() - sent);
        if (n < 0) {
            if (errno == EINTR) continue;
            return errno;
        }
        sent += static_cast<size_t>(n);
    }
    return static_cast<uint32_t>(sent);
}

HostBackend::IoResult<uint64_t> HostBackend::lseek(uint32_t fd, int64_t offset, uint8_t whence) {
    auto it = fds_.find(fd);
    if (it == fds_.end()) return EBADF;
    int host_whence = whence == 1 ? SEEK_CUR : (whence == 2 ? SEEK_END : SEEK_SET);
    off_t pos = ::lseek(it->second, static_cast<off_t>(offset), host_whence);
    if (pos < 0) return errno;
    return static_cast<uint64_t>(pos);
}

uint64_t HostBackend::clock_ns() const {
    return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                     std::chrono::steady_clock::now().time_since_epoch())
                                     .count());
}

}  // namespace mksv::svc
