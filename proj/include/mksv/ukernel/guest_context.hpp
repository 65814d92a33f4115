#pragma once

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "mksv/ikc/bulk.hpp"
#include "mksv/ikc/channel.hpp"
#include "mksv/ikc/error.hpp"
#include "mksv/ikc/frame.hpp"

namespace mksv::uk {

using Tid = uint32_t;

enum class ThreadState : uint8_t { Runnable, Blocked, Exited, Joined };

struct MemRegion {
    uint64_t base = 0;
    uint64_t length = 0;
    uint32_t prot = 0;
};

/// Register-style kernel-call arguments plus optional data windows into the
/// caller's buffers (payloads in, response bytes out).
struct KcallArgs {
    std::array<uint64_t, 4> regs{};
    std::span<const std::byte> data_in{};
    std::span<std::byte> data_out{};
};

struct ContextConfig {
    uint64_t image_bytes = 16ull << 20;
    bool strict_page_mode = false;
    std::chrono::milliseconds bulk_timeout = ikc::kDefaultBulkTimeout;
    bool record_kcall_trace = false;
};

/// Image layout constants. The synthetic kernel blob occupies the low
/// megabyte-and-change, the initrd slot follows, and mmap hands out pages
/// from the user arena above.
inline constexpr uint64_t kKernelImageBytes = 1300 * 1024;
inline constexpr uint64_t kInitrdBase = 0x180000;
inline constexpr uint64_t kInitrdMaxBytes = 64 * 1024;
inline constexpr uint64_t kUserArenaBase = 2ull << 20;
inline constexpr uint64_t kMinImageBytes = 4ull << 20;

class GuestContext;

/// Per-thread view handed to guest programs; all interaction with the
/// kernel goes through here.
class GuestApi {
  public:
    GuestApi(GuestContext& ctx, Tid tid) : ctx_(ctx), tid_(tid) {}

    Tid tid() const { return tid_; }
    uint32_t uvm_id() const;
    GuestContext& context() { return ctx_; }
    bool strict_page_mode() const;

    Result<uint64_t> kcall(ikc::CallId id, const KcallArgs& args = {});

    // process & threads
    uint64_t getpid();
    uint64_t gettid();
    Result<Tid> create_thread(std::function<int(GuestApi&)> entry);
    Result<int> join_thread(Tid target);
    [[noreturn]] void exit_thread(int value);
    [[noreturn]] void exit_process(int value);

    // scheduling & synchronization
    Result<void> yield();
    Result<void> sleep_ns(uint64_t ns);
    Result<void> resume(Tid target);
    Result<void> mutex_lock(uint64_t id);
    Result<void> mutex_unlock(uint64_t id);
    Result<void> cond_wait(uint64_t cond_id, uint64_t mutex_id);
    Result<void> cond_signal(uint64_t cond_id);

    // memory
    Result<uint64_t> mmap(uint64_t length);
    Result<void> munmap(uint64_t base, uint64_t length);
    Result<void> mcopy(uint64_t dst, uint64_t src, uint64_t length);
    Result<void> mctrl(uint64_t code, uint64_t arg);
    std::span<std::byte> image();

    // capability, tls, time, debug
    Result<uint64_t> capctl(uint64_t code, uint64_t arg);
    Result<void> set_tls(uint64_t value);
    Result<uint64_t> get_tls();
    Result<uint64_t> gettime_ns();
    Result<void> debug(std::string_view message);

    // emulated device windows
    Result<uint64_t> mmio_alloc(uint64_t length);
    Result<void> mmio_free(uint64_t window);
    Result<uint64_t> mmio_info(uint64_t window);
    Result<uint64_t> pmio_alloc();
    Result<void> pmio_free(uint64_t port);
    Result<uint64_t> pmio_read(uint64_t port);
    Result<void> pmio_write(uint64_t port, uint64_t value);

    // inter-kernel communication
    struct RemoteReply {
        uint16_t status = 0;
        std::vector<std::byte> payload;
    };
    Result<RemoteReply> call_remote(std::span<const std::byte> payload);
    Result<void> send(std::span<const std::byte> payload);
    Result<std::vector<std::byte>> recv();
    Result<uint64_t> push(std::span<const ikc::BulkSegment> segments);
    Result<uint64_t> pull(std::span<const ikc::BulkSegment> segments);

  private:
    // Terminal kernel statuses unwind the guest callback.
    Result<uint64_t> checked(Result<uint64_t> r);

    GuestContext& ctx_;
    Tid tid_;
};

using GuestEntry = std::function<int(GuestApi&)>;

/// Thrown by GuestApi to unwind a guest callback on exit_thread/exit or
/// when the context is torn down mid-call.
struct GuestUnwind {
    int value = -1;
};

/// The guest-side micro-kernel: one execution context with its memory
/// image, cooperatively scheduled single-core thread table, local kernel
/// calls, and the remote forwarding path through the ikc channel.
///
/// Construction is staged to mirror the boot sequence; callers drive
/// create_vmem .. start_poll_loop in order (UserVm::boot times each step).
class GuestContext {
  public:
    GuestContext(uint32_t uvm_id, std::shared_ptr<ikc::IkcChannel> channel, ContextConfig config);
    ~GuestContext();

    GuestContext(const GuestContext&) = delete;
    GuestContext& operator=(const GuestContext&) = delete;

    // boot stages
    Result<void> create_vmem();
    void create_vcpu();
    Result<void> load_kernel_image();
    Result<void> load_initrd(std::span<const std::byte> blob);
    void reset_vcpu();
    Tid spawn_initial(GuestEntry entry);
    void start_poll_loop();

    Result<uint64_t> kcall(Tid tid, ikc::CallId id, const KcallArgs& args);

    bool wait_completion(std::optional<std::chrono::milliseconds> timeout = std::nullopt);
    bool completed() const;
    int process_status();
    void terminate();
    bool terminated() const;
    /// Joins guest OS threads and the poll loop. The channel must be shut
    /// down first or the poll loop will not exit.
    void join_threads();

    uint32_t uvm_id() const { return uvm_id_; }
    ikc::IkcChannel& channel() { return *channel_; }
    std::span<std::byte> image() { return image_; }
    const ContextConfig& config() const { return config_; }
    uint64_t pv_clock_ns() const;
    size_t thread_count();

    std::vector<ikc::CallId> kcall_trace();
    /// (call, code, arg) records of capctl/mctrl invocations.
    std::vector<std::tuple<ikc::CallId, uint64_t, uint64_t>> control_log();
    std::vector<std::string> debug_log();
    std::vector<MemRegion> regions();

    /// Registers an entry point for create_thread; returns its index.
    uint64_t register_entry(GuestEntry entry);

  private:
    struct PendingResponse {
        uint16_t status = 0;
        std::vector<std::byte> payload;
    };

    struct BulkMeta {
        uint64_t tag = 0;
        uint64_t total_len = 0;
    };

    struct ThreadRec {
        Tid tid = 0;
        ThreadState state = ThreadState::Runnable;
        int exit_value = 0;
        uint64_t tls = 0;
        uint64_t next_seq = 1;
        bool sleeping = false;
        std::optional<uint64_t> wait_seq;
        std::optional<PendingResponse> response;
        PendingResponse last_reply;
        std::optional<BulkMeta> bulk_meta;
        std::deque<std::vector<std::byte>> inbox;
        std::vector<Tid> join_waiters;
        std::condition_variable cv;
        std::thread os_thread;
    };

    struct GuestMutex {
        std::optional<Tid> owner;
        std::deque<Tid> waiters;
    };

    struct GuestCond {
        std::deque<std::pair<Tid, uint64_t>> waiters;  // (tid, mutex id)
    };

    // scheduler core (all under mutex_)
    void schedule_locked();
    void wake_locked(Tid tid);
    bool wait_for_core(std::unique_lock<std::mutex>& lk, Tid tid);
    bool block_until(std::unique_lock<std::mutex>& lk, Tid tid,
                     const std::function<bool()>& pred);
    Result<size_t> run_blocking_unlocked(std::unique_lock<std::mutex>& lk, Tid tid,
                                         const std::function<Result<size_t>()>& op);
    void finalize_thread(Tid tid, int value);
    void terminate_locked();
    void trampoline(Tid tid, GuestEntry entry);
    Tid spawn_thread_locked(GuestEntry entry);

    // kcall handlers (mutex_ held on entry)
    Result<uint64_t> do_local(std::unique_lock<std::mutex>& lk, Tid tid, ikc::CallId id,
                              const KcallArgs& args);
    Result<uint64_t> do_remote(std::unique_lock<std::mutex>& lk, Tid tid, ikc::CallId id,
                               const KcallArgs& args);
    Result<uint64_t> do_sleep(std::unique_lock<std::mutex>& lk, Tid tid, uint64_t ns);
    Result<uint64_t> do_join(std::unique_lock<std::mutex>& lk, Tid tid, Tid target);
    Result<uint64_t> do_mmap(uint64_t length);
    Result<uint64_t> do_munmap(uint64_t base, uint64_t length);
    Result<uint64_t> do_mcopy(uint64_t dst, uint64_t src, uint64_t length);
    bool range_mapped(uint64_t base, uint64_t length) const;

    // poll-loop delivery
    void poll_loop();
    void deliver(const ikc::IkcFrame& frame);

    const uint32_t uvm_id_;
    std::shared_ptr<ikc::IkcChannel> channel_;
    const ContextConfig config_;

    mutable std::mutex mutex_;
    std::condition_variable completion_cv_;

    std::vector<std::byte> image_;
    std::map<Tid, std::unique_ptr<ThreadRec>> threads_;
    std::deque<Tid> run_queue_;
    std::optional<Tid> current_;
    Tid next_tid_ = 0;
    size_t live_threads_ = 0;
    bool vcpu_ready_ = false;
    bool completed_ = false;
    bool terminated_ = false;
    int process_status_ = 0;
    bool process_status_set_ = false;

    std::map<uint64_t, MemRegion> regions_;
    std::map<uint64_t, GuestMutex> mutexes_;
    std::map<uint64_t, GuestCond> conds_;
    std::set<uint64_t> capabilities_;
    std::map<uint64_t, uint64_t> mmio_windows_;  // window id -> length
    std::map<uint64_t, uint64_t> pmio_ports_;    // port -> register value
    uint64_t next_mmio_window_ = 1;
    uint64_t next_pmio_port_ = 1;

    std::vector<GuestEntry> entries_;
    std::deque<Tid> recv_waiters_;
    std::deque<std::vector<std::byte>> any_inbox_;

    uint64_t clock_base_ns_ = 0;
    std::chrono::steady_clock::time_point clock_anchor_;

    std::vector<ikc::CallId> trace_;
    std::vector<std::tuple<ikc::CallId, uint64_t, uint64_t>> control_log_;
    std::vector<std::string> debug_log_;

    std::thread poll_thread_;

    friend class GuestApi;
};

}  // namespace mksv::uk
