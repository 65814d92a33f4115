#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mksv/ikc/channel.hpp"
#include "mksv/sysvm/backend.hpp"
#include "mksv/sysvm/filter.hpp"
#include "mksv/sysvm/gateway.hpp"
#include "mksv/util/net.hpp"

namespace mksv::svc {

struct ServiceConfig {
    size_t worker_cap = 256;
    FilterPolicy filter;
    std::filesystem::path scratch_root;
    std::chrono::milliseconds bulk_timeout = ikc::kDefaultBulkTimeout;
    size_t transport_buffer_bytes = 256 * 1024;
    std::vector<std::byte> snapshot_image;  // cloned in, models snapshot restore
    bool record_exec_trace = false;
};

struct HandleStats {
    uint64_t calls_served = 0;
    uint64_t denied = 0;
    uint64_t backend_invocations = 0;
    uint64_t bytes_in = 0;
    uint64_t bytes_out = 0;
};

struct ExecRecord {
    uint32_t uvm_id = 0;
    uint32_t thread_id = 0;
    uint64_t seq = 0;
    uint32_t worker_id = 0;
    uint8_t op_tag = 0;
};

struct ServiceStats {
    uint64_t dispatched = 0;
    uint64_t denied = 0;
    uint64_t backend_invocations = 0;
    uint64_t unknown_uvm = 0;
    size_t live_uvms = 0;
    size_t live_workers = 0;
    size_t overflow_depth = 0;
};

/// Per-tenant system service: multiplexes inter-kernel calls from the
/// tenant's user VMs, binds each (uvm, thread) to a dedicated worker,
/// applies the call filter, executes host I/O under a per-handle scratch
/// root, and bridges guest stdio to a TCP gateway endpoint.
///
/// Holds no tenant program code and no per-tenant persistent state beyond
/// connection bookkeeping; two fresh instances are indistinguishable up to
/// the per-instance overlay (tenant id, scratch root).
class TenantService {
  public:
    TenantService(std::string tenant_id, ServiceConfig config);
    ~TenantService();

    TenantService(const TenantService&) = delete;
    TenantService& operator=(const TenantService&) = delete;

    struct Registration {
        uint16_t gateway_port = 0;
    };

    /// Creates the handle and gateway without a channel (admin-driven
    /// registration path); traffic flows once attach_channel is called.
    Result<Registration> pre_register(uint32_t uvm_id, BridgeMode stdio_mode);
    Result<void> attach_channel(uint32_t uvm_id, std::shared_ptr<ikc::IkcChannel> channel);
    Result<Registration> register_uvm(uint32_t uvm_id, std::shared_ptr<ikc::IkcChannel> channel,
                                      BridgeMode stdio_mode);
    Result<void> unregister_uvm(uint32_t uvm_id);

    /// Routes one frame to the worker bound to its (uvm, thread), creating
    /// the binding on first use. The source channel is used for rejection
    /// responses when the uvm is not registered.
    void dispatch(const ikc::IkcFrame& frame, const std::shared_ptr<ikc::IkcChannel>& source);

    void shutdown();

    const std::string& tenant_id() const { return tenant_id_; }
    ServiceStats stats();
    std::optional<HandleStats> handle_stats(uint32_t uvm_id);
    std::vector<ExecRecord> exec_trace();
    std::optional<uint16_t> gateway_port(uint32_t uvm_id);
    std::optional<std::chrono::steady_clock::time_point> first_outbound_at(uint32_t uvm_id);
    std::filesystem::path handle_scratch_root(uint32_t uvm_id);

    /// Admin endpoint: line-delimited JSON over loopback TCP, commands
    /// {register, stats, shutdown}.
    util::Result<uint16_t, int> start_admin();

    /// Digest of the tenant-invariant state (config, snapshot, emptiness).
    /// Freshly built instances compare equal regardless of tenant overlay.
    std::string fingerprint() const;

  private:
    struct Handle {
        uint32_t uvm_id = 0;
        BridgeMode stdio_mode = BridgeMode::Stream;
        std::shared_ptr<ikc::IkcChannel> channel;
        std::unique_ptr<HostBackend> backend;
        std::unique_ptr<GatewayBridge> bridge;
        std::vector<std::byte> transport_buffer;
        HandleStats stats;
        std::thread pump;
        std::mutex backend_mutex;  // serializes cross-thread backend access
    };

    struct BindingKey {
        uint32_t uvm_id;
        uint32_t thread_id;
        bool operator<(const BindingKey& o) const {
            return std::tie(uvm_id, thread_id) < std::tie(o.uvm_id, o.thread_id);
        }
    };

    struct Worker {
        uint32_t id = 0;
        BindingKey key{};
        std::deque<ikc::IkcFrame> queue;
        std::mutex mutex;
        std::condition_variable cv;
        bool stopping = false;
        std::thread thread;
    };

    void pump_loop(Handle* handle);
    void worker_loop(Worker* worker);
    void process_frame(Worker* worker, const ikc::IkcFrame& frame);
    void process_request(Worker* worker, Handle* handle, const ikc::IkcFrame& frame);
    void process_raw_push(Worker* worker, Handle* handle, const ikc::IkcFrame& frame);
    std::optional<ikc::IkcFrame> worker_pop(Worker* worker,
                                            std::optional<std::chrono::milliseconds> timeout);
    Handle* find_handle_locked(uint32_t uvm_id);
    std::shared_ptr<ikc::IkcChannel> handle_channel(uint32_t uvm_id);
    void respond(const std::shared_ptr<ikc::IkcChannel>& channel, const ikc::IkcFrame& request,
                 uint16_t status, std::vector<std::byte> payload);
    void respond_errno(const std::shared_ptr<ikc::IkcChannel>& channel,
                       const ikc::IkcFrame& request, int err);
    void admin_loop();

    const std::string tenant_id_;
    const ServiceConfig config_;
    std::vector<std::byte> snapshot_image_;

    mutable std::mutex mutex_;
    std::map<uint32_t, std::unique_ptr<Handle>> handles_;
    std::set<uint32_t> retired_uvm_ids_;
    std::map<BindingKey, std::unique_ptr<Worker>> bindings_;
    std::deque<ikc::IkcFrame> overflow_;
    uint32_t next_worker_id_ = 0;
    bool stopping_ = false;

    std::atomic<uint64_t> dispatched_{0};
    std::atomic<uint64_t> denied_{0};
    std::atomic<uint64_t> backend_invocations_{0};
    std::atomic<uint64_t> unknown_uvm_{0};

    std::mutex trace_mutex_;
    std::vector<ExecRecord> exec_trace_;

    util::TcpListener admin_listener_;
    std::thread admin_thread_;
};

}  // namespace mksv::svc
