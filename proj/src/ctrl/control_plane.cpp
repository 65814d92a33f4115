#include "mksv/ctrl/control_plane.hpp"

#include <cstring>

#include "mksv/util/net.hpp"

namespace mksv::ctrl {

using uk::BootMode;
using uk::StdioMode;
using uk::UserVm;

namespace {

uint64_t elapsed_us(std::chrono::steady_clock::time_point since) {
    return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(
                                     std::chrono::steady_clock::now() - since)
                                     .count());
}

uint64_t us_between(std::chrono::steady_clock::time_point a,
                    std::chrono::steady_clock::time_point b) {
    if (b <= a) return 0;
    return static_cast<uint64_t>(
        std::chrono::duration_cast<std::chrono::microseconds>(b - a).count());
}

svc::BridgeMode bridge_mode(StdioMode stdio) {
    return stdio == StdioMode::Pull ? svc::BridgeMode::Pull : svc::BridgeMode::Stream;
}

}  // namespace

const char* to_string(DeployMode mode) {
    switch (mode) {
        case DeployMode::Shared: return "shared";
        case DeployMode::OneToOne: return "one_to_one";
        case DeployMode::Standalone: return "standalone";
    }
    return "invalid";
}

std::optional<DeployMode> deploy_mode_from(const std::string& name) {
    if (name == "shared") return DeployMode::Shared;
    if (name == "one_to_one") return DeployMode::OneToOne;
    if (name == "standalone") return DeployMode::Standalone;
    return std::nullopt;
}

ControlPlane::ControlPlane(PlaneConfig config, const uk::ProgramRegistry& registry)
    : config_(std::move(config)),
      registry_(registry),
      scratch_root_(config_.effective_scratch_root()),
      namespace_pool_(
          "namespace_token", config_.namespace_pool_size, config_.pool_low_water,
          config_.refill_enabled,
          [this] { return next_namespace_token_.fetch_add(1, std::memory_order_relaxed); }),
      template_pool_("service_template", config_.service_pool_size, config_.pool_low_water,
                     config_.refill_enabled, [this] { return make_template(); }) {
    std::error_code ec;
    std::filesystem::create_directories(scratch_root_, ec);
}

ControlPlane::~ControlPlane() {
    drain_and_stop();
}

ControlPlane::ServiceTemplate ControlPlane::make_template() {
    ServiceTemplate tmpl;
    tmpl.base.worker_cap = config_.worker_cap;
    tmpl.base.bulk_timeout = std::chrono::milliseconds(config_.bulk_timeout_ms);
    tmpl.base.transport_buffer_bytes = config_.transport_buffer_bytes;
    tmpl.base.record_exec_trace = config_.record_exec_trace;
    // the generic snapshot image all instances restore from
    tmpl.base.snapshot_image.assign(config_.service_snapshot_bytes, std::byte{0x5A});
    return tmpl;
}

std::shared_ptr<svc::TenantService> ControlPlane::instantiate_service(
    const std::string& tenant_id, uint64_t instance, ServiceTemplate tmpl) {
    // per-instance overlay on the generic template
    tmpl.base.scratch_root =
        scratch_root_ / tenant_id / ("svc_" + std::to_string(instance));
    services_created_.fetch_add(1, std::memory_order_relaxed);
    return std::make_shared<svc::TenantService>(tenant_id, std::move(tmpl.base));
}

std::shared_ptr<ControlPlane::TenantSlot> ControlPlane::slot_for(const std::string& tenant_id) {
    std::lock_guard lk(slots_mutex_);
    auto it = slots_.find(tenant_id);
    if (it == slots_.end()) {
        it = slots_.emplace(tenant_id, std::make_shared<TenantSlot>()).first;
    }
    return it->second;
}

uk::Manifest ControlPlane::manifest_from(const InvocationRequest& request) const {
    uk::Manifest manifest;
    manifest.name = request.tenant_id + "/" + request.function;
    manifest.entry = request.function;
    manifest.argv = request.argv;
    manifest.stdio = request.stdio;
    return manifest;
}

uk::UvmConfig ControlPlane::uvm_config() const {
    uk::UvmConfig config;
    config.context.image_bytes = config_.uvm_image_bytes;
    config.context.strict_page_mode = config_.strict_page_mode;
    config.context.bulk_timeout = std::chrono::milliseconds(config_.bulk_timeout_ms);
    config.context.record_kcall_trace = config_.record_kcall_trace;
    return config;
}

void ControlPlane::track_uvm(uint32_t id, bool add) {
    std::lock_guard lk(uvms_mutex_);
    if (add) {
        active_uvms_.insert(id);
    } else {
        active_uvms_.erase(id);
    }
}

Result<InvocationResult> ControlPlane::invoke(const InvocationRequest& request,
                                              InvokeObserver* observer) {
    if (stopping_.load(std::memory_order_acquire)) return ErrorCode::VmTerminated;
    if (request.mode == DeployMode::Standalone && request.gateway_interactive) {
        return ErrorCode::BadFrame;  // standalone has no gateway
    }
    invokes_total_.fetch_add(1, std::memory_order_relaxed);
    live_invocations_.fetch_add(1, std::memory_order_acq_rel);
    struct LiveGuard {
        ControlPlane* plane;
        ~LiveGuard() {
            plane->live_invocations_.fetch_sub(1, std::memory_order_acq_rel);
            plane->drain_cv_.notify_all();
        }
    } live_guard{this};

    auto start = std::chrono::steady_clock::now();

    if (request.mode == DeployMode::Standalone) {
        auto r = run_standalone(request, start);
        if (!r.ok()) invoke_errors_.fetch_add(1, std::memory_order_relaxed);
        return r;
    }

    WorkLedger ledger;
    std::shared_ptr<svc::TenantService> service;

    if (request.mode == DeployMode::Shared) {
        auto slot = slot_for(request.tenant_id);
        std::lock_guard slk(slot->mutex);
        if (!slot->service) {
            auto token = namespace_pool_.acquire();
            if (!token.has_value()) {
                invoke_errors_.fetch_add(1, std::memory_order_relaxed);
                return ErrorCode::BackendFailure;  // namespace pool exhausted
            }
            auto tmpl = template_pool_.acquire();
            if (!tmpl.has_value()) {
                namespace_pool_.release(token->value);
                invoke_errors_.fetch_add(1, std::memory_order_relaxed);
                return ErrorCode::BackendFailure;  // template pool exhausted
            }
            ledger.namespace_initialized = token->built_inline;
            ledger.pool_refill_inline = token->built_inline || tmpl->built_inline;
            ledger.service_constructed = true;
            slot->namespace_token = token->value;
            slot->has_token = true;
            slot->service = instantiate_service(request.tenant_id, slot->instance_counter++,
                                                std::move(tmpl->value));
        }
        slot->live_uvms += 1;
        service = slot->service;
    } else {  // OneToOne
        auto token = namespace_pool_.acquire();
        if (!token.has_value()) {
            invoke_errors_.fetch_add(1, std::memory_order_relaxed);
            return ErrorCode::BackendFailure;
        }
        auto tmpl = template_pool_.acquire();
        if (!tmpl.has_value()) {
            namespace_pool_.release(token->value);
            invoke_errors_.fetch_add(1, std::memory_order_relaxed);
            return ErrorCode::BackendFailure;
        }
        ledger.namespace_initialized = token->built_inline;
        ledger.pool_refill_inline = token->built_inline || tmpl->built_inline;
        ledger.service_constructed = true;
        static std::atomic<uint64_t> one_to_one_instance{0};
        service = instantiate_service(request.tenant_id,
                                      1'000'000 + one_to_one_instance.fetch_add(1),
                                      std::move(tmpl->value));
        // token ownership rides with this invocation
        uint64_t token_value = token->value;
        auto result = run_attached(request, service, observer, ledger, start,
                                   elapsed_us(start));
        service->shutdown();
        namespace_pool_.release(token_value);
        services_reaped_.fetch_add(1, std::memory_order_relaxed);
        if (!result.ok()) invoke_errors_.fetch_add(1, std::memory_order_relaxed);
        return result;
    }

    uint64_t service_acquire_us = elapsed_us(start);
    auto result = run_attached(request, service, observer, ledger, start, service_acquire_us);

    {
        auto slot = slot_for(request.tenant_id);
        std::lock_guard slk(slot->mutex);
        slot->live_uvms -= 1;
        if (slot->live_uvms == 0) {
            slot->keepalive_deadline = std::chrono::steady_clock::now() +
                                       std::chrono::milliseconds(config_.keepalive_ms);
        }
    }
    if (!result.ok()) invoke_errors_.fetch_add(1, std::memory_order_relaxed);
    return result;
}

Result<InvocationResult> ControlPlane::run_attached(
    const InvocationRequest& request, std::shared_ptr<svc::TenantService> service,
    InvokeObserver* observer, WorkLedger ledger, std::chrono::steady_clock::time_point start,
    uint64_t service_acquire_us) {
    auto vm = UserVm::boot(manifest_from(request), BootMode::Attached, uvm_config(), registry_);
    if (!vm.ok()) return vm.error();
    uint32_t uvm_id = vm.value()->id();
    track_uvm(uvm_id, true);

    auto registration = service->register_uvm(uvm_id, vm.value()->channel(),
                                              bridge_mode(request.stdio));
    if (!registration.ok()) {
        vm.value()->terminate();
        vm.value()->wait(std::chrono::milliseconds(1000));
        track_uvm(uvm_id, false);
        return registration.error();
    }
    uint16_t port = registration.value().gateway_port;
    uint64_t uvm_boot_us = elapsed_us(start);
    if (observer != nullptr) observer->on_started(port);

    // Inline payloads are fed through a loopback gateway client so the
    // measured path is identical to an external client's.
    std::thread feeder;
    std::vector<std::byte> captured;
    std::mutex captured_mutex;
    if (request.inline_payload.has_value()) {
        feeder = std::thread([&, port] {
            auto client = util::TcpStream::connect("127.0.0.1", port);
            if (!client.has_value()) return;
            client->write_all(*request.inline_payload);
            client->shutdown_write();
            std::array<std::byte, 4096> buf;
            for (;;) {
                ssize_t n = client->read_some(buf, std::chrono::milliseconds(200));
                if (n > 0) {
                    std::lock_guard lk(captured_mutex);
                    captured.insert(captured.end(), buf.begin(), buf.begin() + n);
                    continue;
                }
                if (n < 0 && errno == ETIMEDOUT) continue;
                return;  // EOF or reset: bridge closed after completion
            }
        });
    }

    bool completed = vm.value()->wait(std::chrono::milliseconds(config_.invoke_timeout_ms));
    uint16_t error = 0;
    if (!completed) {
        vm.value()->terminate();
        vm.value()->wait(std::chrono::milliseconds(2000));
        error = static_cast<uint16_t>(ErrorCode::Timeout);
    }

    auto first_byte_at = service->first_outbound_at(uvm_id);
    service->unregister_uvm(uvm_id);
    if (feeder.joinable()) feeder.join();

    InvocationResult result;
    result.tenant_id = request.tenant_id;
    result.uvm_id = uvm_id;
    result.exit_status = vm.value()->exit_status();
    result.error = error;
    result.service_acquire_us = service_acquire_us;
    result.uvm_boot_us = uvm_boot_us;
    result.first_byte_us = first_byte_at ? us_between(start, *first_byte_at) : 0;
    result.completion_us = elapsed_us(start);
    result.gateway_port = port;
    result.work = ledger;
    if (completed) result.boot_report = vm.value()->report();
    {
        std::lock_guard lk(captured_mutex);
        result.payload = std::move(captured);
    }

    // run to completion: the user VM is deleted before invoke returns
    vm.value().reset();
    track_uvm(uvm_id, false);
    return result;
}

Result<InvocationResult> ControlPlane::run_standalone(
    const InvocationRequest& request, std::chrono::steady_clock::time_point start) {
    auto vm = UserVm::boot(manifest_from(request), BootMode::Standalone, uvm_config(),
                           registry_);
    if (!vm.ok()) return vm.error();
    uint32_t uvm_id = vm.value()->id();
    track_uvm(uvm_id, true);
    uint64_t uvm_boot_us = elapsed_us(start);

    if (request.inline_payload.has_value()) {
        vm.value()->feed_stdin(*request.inline_payload);
    }
    vm.value()->close_stdin();

    bool completed = vm.value()->wait(std::chrono::milliseconds(config_.invoke_timeout_ms));
    uint16_t error = 0;
    if (!completed) {
        vm.value()->terminate();
        vm.value()->wait(std::chrono::milliseconds(2000));
        error = static_cast<uint16_t>(ErrorCode::Timeout);
    }

    InvocationResult result;
    result.tenant_id = request.tenant_id;
    result.uvm_id = uvm_id;
    result.exit_status = vm.value()->exit_status();
    result.error = error;
    result.service_acquire_us = 0;
    result.uvm_boot_us = uvm_boot_us;
    auto first = vm.value()->first_output_at();
    result.first_byte_us = first ? us_between(start, *first) : 0;
    result.payload = vm.value()->take_stdout();
    result.completion_us = elapsed_us(start);
    if (completed) result.boot_report = vm.value()->report();

    vm.value().reset();
    track_uvm(uvm_id, false);
    return result;
}

size_t ControlPlane::reap(std::chrono::steady_clock::time_point now) {
    std::vector<std::shared_ptr<TenantSlot>> slots;
    {
        std::lock_guard lk(slots_mutex_);
        for (auto& [tenant, slot] : slots_) slots.push_back(slot);
    }
    size_t retired = 0;
    for (auto& slot : slots) {
        std::shared_ptr<svc::TenantService> doomed;
        {
            std::lock_guard slk(slot->mutex);
            if (!slot->service || slot->live_uvms != 0) continue;
            if (slot->keepalive_deadline > now) continue;
            doomed = std::move(slot->service);
            slot->service.reset();
            if (slot->has_token) {
                namespace_pool_.release(slot->namespace_token);
                slot->has_token = false;
            }
        }
        doomed->shutdown();
        services_reaped_.fetch_add(1, std::memory_order_relaxed);
        ++retired;
    }
    return retired;
}

void ControlPlane::start_reaper() {
    if (reaper_.joinable()) return;
    reaper_ = std::thread([this] { reaper_loop(); });
}

void ControlPlane::reaper_loop() {
    auto period = std::chrono::milliseconds(
        std::clamp<uint64_t>(config_.keepalive_ms / 4, 10, 1000));
    while (!stopping_.load(std::memory_order_acquire)) {
        std::this_thread::sleep_for(period);
        reap(std::chrono::steady_clock::now());
    }
}

void ControlPlane::drain_and_stop() {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true)) {
        if (reaper_.joinable()) reaper_.join();
        return;
    }
    {
        std::unique_lock lk(drain_mutex_);
        drain_cv_.wait(lk, [&] { return live_invocations_.load() == 0; });
    }
    if (reaper_.joinable()) reaper_.join();
    // retire everything, keep-alive notwithstanding
    std::vector<std::shared_ptr<TenantSlot>> slots;
    {
        std::lock_guard lk(slots_mutex_);
        for (auto& [tenant, slot] : slots_) slots.push_back(slot);
    }
    for (auto& slot : slots) {
        std::lock_guard slk(slot->mutex);
        if (slot->service) {
            slot->service->shutdown();
            slot->service.reset();
            if (slot->has_token) {
                namespace_pool_.release(slot->namespace_token);
                slot->has_token = false;
            }
            services_reaped_.fetch_add(1, std::memory_order_relaxed);
        }
    }
}

PlaneStats ControlPlane::stats() {
    PlaneStats s;
    s.invokes_total = invokes_total_.load(std::memory_order_relaxed);
    s.invoke_errors = invoke_errors_.load(std::memory_order_relaxed);
    s.live_uvms = live_uvms();
    {
        std::lock_guard lk(slots_mutex_);
        for (auto& [tenant, slot] : slots_) {
            std::lock_guard slk(slot->mutex);
            if (slot->service) {
                s.live_services += 1;
                s.tokens_held += slot->has_token ? 1 : 0;
            }
        }
    }
    auto ns = namespace_pool_.stats();
    s.namespace_acquired = ns.acquired;
    s.namespace_released = ns.released;
    s.services_created = services_created_.load(std::memory_order_relaxed);
    s.services_reaped = services_reaped_.load(std::memory_order_relaxed);
    return s;
}

size_t ControlPlane::live_uvms() {
    std::lock_guard lk(uvms_mutex_);
    return active_uvms_.size();
}

std::vector<uint32_t> ControlPlane::active_uvm_ids() {
    std::lock_guard lk(uvms_mutex_);
    return std::vector<uint32_t>(active_uvms_.begin(), active_uvms_.end());
}

ResourcePool<uint64_t>::Stats ControlPlane::namespace_pool_stats() {
    return namespace_pool_.stats();
}

std::shared_ptr<svc::TenantService> ControlPlane::tenant_service(const std::string& tenant_id) {
    auto slot = slot_for(tenant_id);
    std::lock_guard slk(slot->mutex);
    return slot->service;
}

}  // namespace mksv::ctrl
