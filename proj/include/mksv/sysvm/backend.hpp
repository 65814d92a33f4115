#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "mksv/ikc/error.hpp"
#include "mksv/util/result.hpp"

namespace mksv::svc {

/// Host-side I/O executor for one user VM. All file operations resolve
/// under the handle's scratch root; paths may not escape it. Errors carry
/// errno values so responses can marshal them back to the guest.
class HostBackend {
  public:
    template <typename T>
    using IoResult = util::Result<T, int>;  // error = errno

    explicit HostBackend(std::filesystem::path scratch_root);
    ~HostBackend();

    HostBackend(const HostBackend&) = delete;
    HostBackend& operator=(const HostBackend&) = delete;

    IoResult<uint32_t> open(std::string_view path, uint32_t flags);
    IoResult<void> close(uint32_t fd);
    IoResult<std::vector<std::byte>> read(uint32_t fd, size_t count);
    IoResult<uint32_t> write(uint32_t fd, std::span<const std::byte> data);
    IoResult<uint64_t> lseek(uint32_t fd, int64_t offset, uint8_t whence);
    uint64_t clock_ns() const;

    const std::filesystem::path& scratch_root() const { return scratch_root_; }

  private:
    IoResult<std::filesystem::path> resolve(std::string_view path) const;

    std::filesystem::path scratch_root_;
    std::map<uint32_t, int> fds_;  // guest fd -> host fd
    uint32_t next_fd_ = 3;
};

}  // namespace mksv::svc
