#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mksv/ukernel/guest_context.hpp"
#include "mksv/ukernel/programs.hpp"

namespace mksv::uk {

/// How guest standard I/O reaches the outside world.
///  Stream: inbound bytes are framed eagerly to the guest; read(0) -> recv.
///  Pull:   inbound bytes buffer at the service/supervisor; read(0) issues
///          sock_recv requests, taking the bulk path for large counts.
enum class StdioMode : uint8_t { Stream, Pull };

struct Manifest {
    std::string name;
    std::string entry;  // program registry key
    std::vector<std::string> argv;
    StdioMode stdio = StdioMode::Stream;
    std::vector<std::byte> initrd;
};

enum class BootMode : uint8_t {
    Standalone,  // no system service; stdio terminates at the supervisor
    Attached,    // host side of the channel is pumped by a tenant service
};

inline constexpr std::array<const char*, 10> kBootPhaseNames = {
    "channel_setup", "partition_create", "vmem_create",  "vcpu_create",  "kernel_load",
    "initrd_load",   "vcpu_reset",       "thread_spawn", "guest_exec",   "exit_handling",
};

struct BootPhaseReport {
    struct Phase {
        std::string name;
        uint64_t micros = 0;
    };
    std::vector<Phase> phases;
    uint64_t total_micros = 0;

    const Phase* find(std::string_view name) const;
};

struct UvmConfig {
    ContextConfig context;
};

/// One ephemeral user VM: a guest context plus its supervisor-side plumbing,
/// booted through the ten timed phases. In standalone mode the supervisor
/// runs a minimal endpoint that terminates stdio and the clock; in attached
/// mode the host direction is handed to a tenant service.
class UserVm {
  public:
    ~UserVm();

    static Result<std::unique_ptr<UserVm>> boot(
        const Manifest& manifest, BootMode mode, const UvmConfig& config,
        const ProgramRegistry& registry = ProgramRegistry::builtin());

    uint32_t id() const { return uvm_id_; }
    BootMode mode() const { return mode_; }
    const Manifest& manifest() const { return manifest_; }
    GuestContext& context() { return *context_; }
    std::shared_ptr<ikc::IkcChannel> channel() { return channel_; }

    /// Blocks until the guest runs to completion (or the timeout elapses),
    /// then finalizes the boot report. Returns false on timeout.
    bool wait(std::optional<std::chrono::milliseconds> timeout = std::nullopt);
    int exit_status();
    void terminate();

    /// Valid once wait() has returned true.
    const BootPhaseReport& report() const { return report_; }

    // standalone-mode stdio endpoints
    void feed_stdin(std::span<const std::byte> data);
    void close_stdin();
    std::vector<std::byte> take_stdout();
    std::optional<std::chrono::steady_clock::time_point> first_output_at();

    /// Fresh user-VM identifiers; never reused within a process.
    static uint32_t allocate_id();

  private:
    UserVm() = default;

    void standalone_pump();
    void handle_standalone_request(const ikc::IkcFrame& frame);
    void capture_output(std::span<const std::byte> data);

    uint32_t uvm_id_ = 0;
    BootMode mode_ = BootMode::Standalone;
    Manifest manifest_;
    UvmConfig config_;
    std::shared_ptr<ikc::IkcChannel> channel_;
    std::unique_ptr<GuestContext> context_;
    std::thread pump_thread_;

    BootPhaseReport report_;
    std::chrono::steady_clock::time_point exec_started_;
    bool finalized_ = false;
    std::mutex finalize_mutex_;

    // standalone stdio state
    std::mutex stdio_mutex_;
    std::condition_variable stdio_cv_;
    std::deque<std::byte> stdin_buffer_;
    bool stdin_eof_ = false;
    std::vector<std::byte> stdout_buffer_;
    std::optional<std::chrono::steady_clock::time_point> first_output_;
};

}  // namespace mksv::uk
