#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <set>

#include "mksv/ctrl/config.hpp"
#include "mksv/ctrl/pool.hpp"
#include "mksv/sysvm/tenant_service.hpp"
#include "mksv/ukernel/user_vm.hpp"

namespace mksv::ctrl {

enum class DeployMode : uint8_t { Shared, OneToOne, Standalone };

const char* to_string(DeployMode mode);
std::optional<DeployMode> deploy_mode_from(const std::string& name);

struct InvocationRequest {
    std::string tenant_id;
    std::string function;  // program registry entry
    DeployMode mode = DeployMode::Shared;
    std::vector<std::string> argv;
    uk::StdioMode stdio = uk::StdioMode::Stream;
    std::optional<std::vector<std::byte>> inline_payload;
    bool gateway_interactive = false;  // caller drives the gateway itself
};

/// Per-invoke accounting of initialization work done on the critical path.
/// A warm shared invoke must leave all three flags false.
struct WorkLedger {
    bool service_constructed = false;
    bool pool_refill_inline = false;
    bool namespace_initialized = false;
};

struct InvocationResult {
    std::string tenant_id;
    uint32_t uvm_id = 0;
    int exit_status = 0;
    uint16_t error = 0;  // ErrorCode when nonzero
    // elapsed micros from invoke start to the end of each phase
    uint64_t service_acquire_us = 0;
    uint64_t uvm_boot_us = 0;
    uint64_t first_byte_us = 0;  // 0 when the function produced no output
    uint64_t completion_us = 0;
    std::optional<uint16_t> gateway_port;
    std::vector<std::byte> payload;
    WorkLedger work;
    uk::BootPhaseReport boot_report;
};

class InvokeObserver {
  public:
    virtual ~InvokeObserver() = default;
    virtual void on_started(uint16_t gateway_port) { (void)gateway_port; }
};

struct PlaneStats {
    uint64_t invokes_total = 0;
    uint64_t invoke_errors = 0;
    size_t live_uvms = 0;
    size_t live_services = 0;
    uint64_t tokens_held = 0;
    uint64_t namespace_acquired = 0;
    uint64_t namespace_released = 0;
    uint64_t services_created = 0;
    uint64_t services_reaped = 0;
};

/// Host daemon state: tenant slots with shared services, pre-initialized
/// namespace-token and service-template pools, run-to-completion user VM
/// lifecycle, and the keep-alive reaper.
class ControlPlane {
  public:
    explicit ControlPlane(PlaneConfig config,
                          const uk::ProgramRegistry& registry = uk::ProgramRegistry::builtin());
    ~ControlPlane();

    Result<InvocationResult> invoke(const InvocationRequest& request,
                                    InvokeObserver* observer = nullptr);

    /// Retires idle services whose keep-alive deadline has passed; returns
    /// how many were shut down.
    size_t reap(std::chrono::steady_clock::time_point now);

    void start_reaper();
    void drain_and_stop();

    PlaneStats stats();
    size_t live_uvms();
    std::vector<uint32_t> active_uvm_ids();
    ResourcePool<uint64_t>::Stats namespace_pool_stats();
    const PlaneConfig& config() const { return config_; }
    /// Live shared service for a tenant, if any (test/introspection hook).
    std::shared_ptr<svc::TenantService> tenant_service(const std::string& tenant_id);

  private:
    struct ServiceTemplate {
        svc::ServiceConfig base;
    };

    struct TenantSlot {
        std::mutex mutex;  // serializes service creation per tenant
        std::shared_ptr<svc::TenantService> service;
        uint64_t namespace_token = 0;
        bool has_token = false;
        size_t live_uvms = 0;
        std::chrono::steady_clock::time_point keepalive_deadline{};
        uint64_t instance_counter = 0;
    };

    std::shared_ptr<TenantSlot> slot_for(const std::string& tenant_id);
    ServiceTemplate make_template();
    std::shared_ptr<svc::TenantService> instantiate_service(const std::string& tenant_id,
                                                            uint64_t instance,
                                                            ServiceTemplate tmpl);
    Result<InvocationResult> run_attached(const InvocationRequest& request,
                                          std::shared_ptr<svc::TenantService> service,
                                          InvokeObserver* observer, WorkLedger ledger,
                                          std::chrono::steady_clock::time_point start,
                                          uint64_t service_acquire_us);
    Result<InvocationResult> run_standalone(const InvocationRequest& request,
                                            std::chrono::steady_clock::time_point start);
    uk::Manifest manifest_from(const InvocationRequest& request) const;
    uk::UvmConfig uvm_config() const;
    void track_uvm(uint32_t id, bool add);
    void reaper_loop();

    PlaneConfig config_;
    const uk::ProgramRegistry& registry_;
    std::filesystem::path scratch_root_;

    ResourcePool<uint64_t> namespace_pool_;
    ResourcePool<ServiceTemplate> template_pool_;

    std::mutex slots_mutex_;
    std::map<std::string, std::shared_ptr<TenantSlot>> slots_;

    std::mutex uvms_mutex_;
    std::set<uint32_t> active_uvms_;

    std::atomic<uint64_t> invokes_total_{0};
    std::atomic<uint64_t> invoke_errors_{0};
    std::atomic<uint64_t> services_created_{0};
    std::atomic<uint64_t> services_reaped_{0};
    std::atomic<uint64_t> next_namespace_token_{1};
    std::atomic<uint64_t> live_invocations_{0};

    std::atomic<bool> stopping_{false};
    std::thread reaper_;
    std::mutex drain_mutex_;
    std::condition_variable drain_cv_;
};

}  // namespace mksv::ctrl
