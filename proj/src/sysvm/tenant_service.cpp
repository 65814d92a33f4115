#include "mksv/sysvm/tenant_service.hpp"

#include <cerrno>
#include <cstring>

#include <json.hpp>

#include "mksv/ikc/marshal.hpp"

namespace mksv::svc {

using ikc::CallId;
using ikc::FrameKind;
using ikc::IkcFrame;
using ikc::MarshaledOp;
using ikc::OpTag;

TenantService::TenantService(std::string tenant_id, ServiceConfig config)
    : tenant_id_(std::move(tenant_id)),
      config_(std::move(config)),
      snapshot_image_(config_.snapshot_image) {
    // The snapshot restore: the generic image is cloned into this instance.
    // Touch it so the cost (and the memory) is real.
    if (!snapshot_image_.empty()) {
        volatile std::byte sink{0};
        for (size_t i = 0; i < snapshot_image_.size(); i += 4096) sink = snapshot_image_[i];
        (void)sink;
    }
}

TenantService::~TenantService() {
    shutdown();
}

Result<TenantService::Registration> TenantService::pre_register(uint32_t uvm_id,
                                                                BridgeMode stdio_mode) {
    std::lock_guard lk(mutex_);
    if (stopping_) return ErrorCode::VmTerminated;
    if (handles_.count(uvm_id) != 0 || retired_uvm_ids_.count(uvm_id) != 0) {
        return ErrorCode::BackendFailure;  // ids are never reused
    }
    auto handle = std::make_unique<Handle>();
    handle->uvm_id = uvm_id;
    handle->stdio_mode = stdio_mode;
    handle->backend = std::make_unique<HostBackend>(config_.scratch_root /
                                                    ("uvm_" + std::to_string(uvm_id)));
    handle->bridge = std::make_unique<GatewayBridge>(uvm_id, stdio_mode);
    auto port = handle->bridge->start();
    if (!port.ok()) return ErrorCode::BackendFailure;
    handle->transport_buffer.assign(config_.transport_buffer_bytes, std::byte{0});
    Registration reg{port.value()};
    handles_.emplace(uvm_id, std::move(handle));
    return reg;
}

Result<void> TenantService::attach_channel(uint32_t uvm_id,
                                           std::shared_ptr<ikc::IkcChannel> channel) {
    std::lock_guard lk(mutex_);
    auto it = handles_.find(uvm_id);
    if (it == handles_.end()) return ErrorCode::BackendFailure;
    Handle* handle = it->second.get();
    if (handle->channel) return ErrorCode::BackendFailure;
    handle->channel = std::move(channel);
    handle->bridge->attach_channel(handle->channel);
    handle->pump = std::thread([this, handle] { pump_loop(handle); });
    return {};
}

Result<TenantService::Registration> TenantService::register_uvm(
    uint32_t uvm_id, std::shared_ptr<ikc::IkcChannel> channel, BridgeMode stdio_mode) {
    auto reg = pre_register(uvm_id, stdio_mode);
    if (!reg.ok()) return reg.error();
    auto attached = attach_channel(uvm_id, std::move(channel));
    if (!attached.ok()) return attached.error();
    return reg;
}

Result<void> TenantService::unregister_uvm(uint32_t uvm_id) {
    Handle* handle = nullptr;
    std::vector<std::unique_ptr<Worker>> workers;
    {
        std::lock_guard lk(mutex_);
        auto it = handles_.find(uvm_id);
        if (it == handles_.end()) return ErrorCode::BackendFailure;
        handle = it->second.get();
        for (auto w = bindings_.begin(); w != bindings_.end();) {
            if (w->first.uvm_id == uvm_id) {
                workers.push_back(std::move(w->second));
                w = bindings_.erase(w);
            } else {
                ++w;
            }
        }
        retired_uvm_ids_.insert(uvm_id);
    }

    if (handle->channel) handle->channel->shutdown();
    handle->bridge->stop();
    for (auto& worker : workers) {
        {
            std::lock_guard wlk(worker->mutex);
            worker->stopping = true;
        }
        worker->cv.notify_all();
        if (worker->thread.joinable()) worker->thread.join();
    }
    if (handle->pump.joinable()) handle->pump.join();

    std::unique_ptr<Handle> owned;
    std::vector<IkcFrame> redispatch;
    {
        std::lock_guard lk(mutex_);
        auto it = handles_.find(uvm_id);
        owned = std::move(it->second);
        handles_.erase(it);
        std::erase_if(overflow_, [&](const IkcFrame& f) { return f.uvm_id == uvm_id; });
        while (!overflow_.empty() &&
               bindings_.size() + redispatch.size() < config_.worker_cap) {
            redispatch.push_back(std::move(overflow_.front()));
            overflow_.pop_front();
        }
    }
    for (const auto& frame : redispatch) dispatch(frame, handle_channel(frame.uvm_id));
    return {};
}

void TenantService::shutdown() {
    std::vector<uint32_t> ids;
    bool first = false;
    {
        std::lock_guard lk(mutex_);
        first = !stopping_;
        stopping_ = true;
        for (const auto& [id, handle] : handles_) ids.push_back(id);
    }
    if (!first) {
        // teardown already ran (possibly from the admin thread); just make
        // sure the admin thread is collected before members are destroyed
        if (admin_thread_.joinable() && admin_thread_.get_id() != std::this_thread::get_id()) {
            admin_thread_.join();
        }
        return;
    }
    for (uint32_t id : ids) {
        Handle* handle = nullptr;
        {
            std::lock_guard lk(mutex_);
            auto it = handles_.find(id);
            if (it == handles_.end()) continue;
            handle = it->second.get();
        }
        if (handle->channel) handle->channel->shutdown();
    }
    for (uint32_t id : ids) {
        std::vector<std::unique_ptr<Worker>> workers;
        Handle* handle = nullptr;
        {
            std::lock_guard lk(mutex_);
            auto it = handles_.find(id);
            if (it == handles_.end()) continue;
            handle = it->second.get();
            for (auto w = bindings_.begin(); w != bindings_.end();) {
                if (w->first.uvm_id == id) {
                    workers.push_back(std::move(w->second));
                    w = bindings_.erase(w);
                } else {
                    ++w;
                }
            }
        }
        handle->bridge->stop();
        for (auto& worker : workers) {
            {
                std::lock_guard wlk(worker->mutex);
                worker->stopping = true;
            }
            worker->cv.notify_all();
            if (worker->thread.joinable()) worker->thread.join();
        }
        if (handle->pump.joinable()) handle->pump.join();
    }
    {
        std::lock_guard lk(mutex_);
        handles_.clear();
        overflow_.clear();
    }
    admin_listener_.close();
    if (admin_thread_.joinable() && admin_thread_.get_id() != std::this_thread::get_id()) {
        admin_thread_.join();
    }
}

void TenantService::pump_loop(Handle* handle) {
    auto channel = handle->channel;
    for (;;) {
        auto frame = channel->host_recv();
        if (!frame.ok()) return;
        dispatch(frame.value(), channel);
    }
}

void TenantService::dispatch(const IkcFrame& frame,
                             const std::shared_ptr<ikc::IkcChannel>& source) {
    if (frame.kind != FrameKind::CallRequest && frame.kind != FrameKind::BulkReady) return;
    dispatched_.fetch_add(1, std::memory_order_relaxed);

    std::lock_guard lk(mutex_);
    if (stopping_) return;
    if (handles_.count(frame.uvm_id) == 0) {
        unknown_uvm_.fetch_add(1, std::memory_order_relaxed);
        if (frame.kind == FrameKind::CallRequest && source) {
            respond(source, frame, static_cast<uint16_t>(ErrorCode::VmTerminated), {});
        }
        return;
    }

    BindingKey key{frame.uvm_id, frame.thread_id};
    auto binding = bindings_.find(key);
    if (binding == bindings_.end()) {
        if (bindings_.size() >= config_.worker_cap) {
            overflow_.push_back(frame);  // drained when a binding retires
            return;
        }
        auto worker = std::make_unique<Worker>();
        worker->id = next_worker_id_++;
        worker->key = key;
        Worker* raw = worker.get();
        worker->thread = std::thread([this, raw] { worker_loop(raw); });
        binding = bindings_.emplace(key, std::move(worker)).first;
    }
    {
        std::lock_guard wlk(binding->second->mutex);
        binding->second->queue.push_back(frame);
    }
    binding->second->cv.notify_one();
}

std::optional<IkcFrame> TenantService::worker_pop(
    Worker* worker, std::optional<std::chrono::milliseconds> timeout) {
    std::unique_lock lk(worker->mutex);
    auto ready = [&] { return worker->stopping || !worker->queue.empty(); };
    if (timeout) {
        if (!worker->cv.wait_for(lk, *timeout, ready)) return std::nullopt;
    } else {
        worker->cv.wait(lk, ready);
    }
    if (worker->queue.empty()) return std::nullopt;
    IkcFrame frame = std::move(worker->queue.front());
    worker->queue.pop_front();
    return frame;
}

void TenantService::worker_loop(Worker* worker) {
    for (;;) {
        auto frame = worker_pop(worker, std::nullopt);
        if (!frame.has_value()) return;
        process_frame(worker, frame.value());
    }
}

TenantService::Handle* TenantService::find_handle_locked(uint32_t uvm_id) {
    auto it = handles_.find(uvm_id);
    return it == handles_.end() ? nullptr : it->second.get();
}

std::shared_ptr<ikc::IkcChannel> TenantService::handle_channel(uint32_t uvm_id) {
    std::lock_guard lk(mutex_);
    Handle* handle = find_handle_locked(uvm_id);
    return handle ? handle->channel : nullptr;
}

void TenantService::respond(const std::shared_ptr<ikc::IkcChannel>& channel,
                            const IkcFrame& request, uint16_t status,
                            std::vector<std::byte> payload) {
    IkcFrame resp;
    resp.kind = FrameKind::CallResponse;
    resp.uvm_id = request.uvm_id;
    resp.thread_id = request.thread_id;
    resp.call_id = request.call_id;
    resp.status = status;
    resp.seq = request.seq;
    resp.payload = std::move(payload);
    if (channel) channel->host_send(resp);
}

void TenantService::respond_errno(const std::shared_ptr<ikc::IkcChannel>& channel,
                                  const IkcFrame& request, int err) {
    std::vector<std::byte> payload;
    ikc::append_u32(payload, static_cast<uint32_t>(err));
    respond(channel, request, static_cast<uint16_t>(ErrorCode::BackendFailure),
            std::move(payload));
}

void TenantService::process_frame(Worker* worker, const IkcFrame& frame) {
    Handle* handle = nullptr;
    {
        std::lock_guard lk(mutex_);
        handle = find_handle_locked(frame.uvm_id);
    }
    if (handle == nullptr) return;  // handle retired while queued

    if (frame.kind == FrameKind::BulkReady) {
        process_raw_push(worker, handle, frame);
        return;
    }
    process_request(worker, handle, frame);
}

void TenantService::process_raw_push(Worker* worker, Handle* handle, const IkcFrame& frame) {
    (void)worker;
    auto info = ikc::decode_bulk_ready(frame.payload);
    if (!info.ok()) return;
    auto data = handle->channel->guest_to_host_bulk().pull(frame.seq, info.value().total_len,
                                                           config_.bulk_timeout);
    if (!data.ok()) return;
    handle->stats.bytes_in += data.value().size();
    if (config_.filter.evaluate(CallId::kPush, nullptr) == Verdict::Deny) {
        denied_.fetch_add(1, std::memory_order_relaxed);
        handle->stats.denied += 1;
        return;  // transfer completed to unblock the guest, data dropped
    }
    // raw pushes terminate at the gateway stream
    handle->bridge->send_outbound(data.value());
}

void TenantService::process_request(Worker* worker, Handle* handle, const IkcFrame& frame) {
    auto channel = handle->channel;
    if (frame.call_id != CallId::kSend) {
        respond(channel, frame, static_cast<uint16_t>(ErrorCode::UnknownCall), {});
        return;
    }
    auto parsed = ikc::unmarshal_op(frame.payload);
    if (!parsed.ok()) {
        respond_errno(channel, frame, EBADMSG);
        return;
    }
    const MarshaledOp& op = parsed.value();

    {
        std::lock_guard blk(handle->backend_mutex);
        handle->stats.calls_served += 1;
        handle->stats.bytes_in += frame.payload.size();
    }
    if (config_.record_exec_trace) {
        std::lock_guard tlk(trace_mutex_);
        exec_trace_.push_back({frame.uvm_id, frame.thread_id, frame.seq, worker->id,
                               static_cast<uint8_t>(op.tag)});
    }

    // The backend is reachable only through this verdict.
    if (config_.filter.evaluate(frame.call_id, &op) == Verdict::Deny) {
        denied_.fetch_add(1, std::memory_order_relaxed);
        std::lock_guard blk(handle->backend_mutex);
        handle->stats.denied += 1;
        respond(channel, frame, static_cast<uint16_t>(ErrorCode::FilterDenied), {});
        return;
    }
    backend_invocations_.fetch_add(1, std::memory_order_relaxed);
    {
        std::lock_guard blk(handle->backend_mutex);
        handle->stats.backend_invocations += 1;
    }

    auto push_to_guest = [&](uint64_t tag, std::vector<std::byte> data) {
        IkcFrame ready;
        ready.kind = FrameKind::BulkReady;
        ready.uvm_id = frame.uvm_id;
        ready.thread_id = frame.thread_id;
        ready.call_id = CallId::kPull;
        ready.seq = tag;
        ready.payload =
            ikc::encode_bulk_ready({ikc::BulkDirection::Pull, data.size(), 1});
        channel->host_send(ready);
        channel->host_to_guest_bulk().push(tag, std::move(data), config_.bulk_timeout);
    };
    auto pull_from_guest = [&](uint32_t expected) -> std::optional<std::vector<std::byte>> {
        auto ready = worker_pop(worker, config_.bulk_timeout);
        if (!ready.has_value() || ready.value().kind != FrameKind::BulkReady) {
            return std::nullopt;
        }
        auto info = ikc::decode_bulk_ready(ready.value().payload);
        if (!info.ok() || info.value().total_len != expected) return std::nullopt;
        auto data = handle->channel->guest_to_host_bulk().pull(ready.value().seq, expected,
                                                               config_.bulk_timeout);
        if (!data.ok()) return std::nullopt;
        return data.take();
    };

    switch (op.tag) {
        case OpTag::Open: {
            std::lock_guard blk(handle->backend_mutex);
            auto fd = handle->backend->open(op.path, op.flags);
            if (!fd.ok()) {
                respond_errno(channel, frame, fd.error());
                return;
            }
            std::vector<std::byte> payload;
            ikc::append_u32(payload, fd.value());
            respond(channel, frame, ikc::kStatusOk, std::move(payload));
            return;
        }
        case OpTag::Close: {
            std::lock_guard blk(handle->backend_mutex);
            auto closed = handle->backend->close(op.fd);
            if (!closed.ok()) {
                respond_errno(channel, frame, closed.error());
                return;
            }
            respond(channel, frame, ikc::kStatusOk, {});
            return;
        }
        case OpTag::Lseek: {
            std::lock_guard blk(handle->backend_mutex);
            auto pos = handle->backend->lseek(op.fd, op.offset, op.whence);
            if (!pos.ok()) {
                respond_errno(channel, frame, pos.error());
                return;
            }
            std::vector<std::byte> payload;
            ikc::append_u64(payload, pos.value());
            respond(channel, frame, ikc::kStatusOk, std::move(payload));
            return;
        }
        case OpTag::Clock: {
            std::vector<std::byte> payload;
            ikc::append_u64(payload, handle->backend->clock_ns());
            respond(channel, frame, ikc::kStatusOk, std::move(payload));
            return;
        }
        case OpTag::Read: {
            if (!op.bulk) {
                size_t count = std::min<size_t>(op.count, ikc::kInlinePayloadMax);
                std::lock_guard blk(handle->backend_mutex);
                auto data = handle->backend->read(op.fd, count);
                if (!data.ok()) {
                    respond_errno(channel, frame, data.error());
                    return;
                }
                handle->stats.bytes_out += data.value().size();
                respond(channel, frame, ikc::kStatusOk, data.take());
                return;
            }
            std::vector<std::byte> data;
            {
                std::lock_guard blk(handle->backend_mutex);
                auto r = handle->backend->read(op.fd, op.count);
                if (!r.ok()) {
                    respond_errno(channel, frame, r.error());
                    return;
                }
                data = r.take();
                handle->stats.bytes_out += data.size();
            }
            std::vector<std::byte> payload;
            ikc::append_u32(payload, static_cast<uint32_t>(data.size()));
            respond(channel, frame, ikc::kStatusOk, std::move(payload));
            if (!data.empty()) push_to_guest(frame.seq, std::move(data));
            return;
        }
        case OpTag::Write: {
            if (!op.bulk) {
                std::lock_guard blk(handle->backend_mutex);
                auto written = handle->backend->write(op.fd, op.data);
                if (!written.ok()) {
                    respond_errno(channel, frame, written.error());
                    return;
                }
                std::vector<std::byte> payload;
                ikc::append_u32(payload, written.value());
                respond(channel, frame, ikc::kStatusOk, std::move(payload));
                return;
            }
            std::vector<std::byte> payload;
            ikc::append_u32(payload, op.count);
            respond(channel, frame, ikc::kStatusOk, std::move(payload));
            auto data = pull_from_guest(op.count);
            if (!data.has_value()) return;
            std::lock_guard blk(handle->backend_mutex);
            handle->backend->write(op.fd, data.value());
            return;
        }
        case OpTag::SockSend: {
            if (!op.bulk) {
                auto sent = handle->bridge->send_outbound(op.data);
                if (!sent.ok()) {
                    respond_errno(channel, frame, sent.error());
                    return;
                }
                std::lock_guard blk(handle->backend_mutex);
                handle->stats.bytes_out += op.data.size();
                std::vector<std::byte> payload;
                ikc::append_u32(payload, static_cast<uint32_t>(sent.value()));
                respond(channel, frame, ikc::kStatusOk, std::move(payload));
                return;
            }
            std::vector<std::byte> payload;
            ikc::append_u32(payload, op.count);
            respond(channel, frame, ikc::kStatusOk, std::move(payload));
            auto data = pull_from_guest(op.count);
            if (!data.has_value()) return;
            handle->bridge->send_outbound(data.value());
            std::lock_guard blk(handle->backend_mutex);
            handle->stats.bytes_out += data.value().size();
            return;
        }
        case OpTag::SockRecv: {
            size_t limit = op.bulk ? op.count
                                   : std::min<size_t>(op.count, ikc::kInlinePayloadMax);
            auto data = handle->bridge->take_inbound(limit);
            if (!data.has_value()) {
                respond_errno(channel, frame, ECONNABORTED);
                return;
            }
            if (!op.bulk) {
                respond(channel, frame, ikc::kStatusOk, std::move(data.value()));
                return;
            }
            std::vector<std::byte> payload;
            ikc::append_u32(payload, static_cast<uint32_t>(data.value().size()));
            respond(channel, frame, ikc::kStatusOk, std::move(payload));
            if (!data.value().empty()) push_to_guest(frame.seq, std::move(data.value()));
            return;
        }
        default:
            respond_errno(channel, frame, ENOSYS);
            return;
    }
}

ServiceStats TenantService::stats() {
    std::lock_guard lk(mutex_);
    ServiceStats s;
    s.dispatched = dispatched_.load(std::memory_order_relaxed);
    s.denied = denied_.load(std::memory_order_relaxed);
    s.backend_invocations = backend_invocations_.load(std::memory_order_relaxed);
    s.unknown_uvm = unknown_uvm_.load(std::memory_order_relaxed);
    s.live_uvms = handles_.size();
    s.live_workers = bindings_.size();
    s.overflow_depth = overflow_.size();
    return s;
}

std::optional<HandleStats> TenantService::handle_stats(uint32_t uvm_id) {
    std::lock_guard lk(mutex_);
    Handle* handle = find_handle_locked(uvm_id);
    if (handle == nullptr) return std::nullopt;
    std::lock_guard blk(handle->backend_mutex);
    return handle->stats;
}

std::vector<ExecRecord> TenantService::exec_trace() {
    std::lock_guard lk(trace_mutex_);
    return exec_trace_;
}

std::optional<uint16_t> TenantService::gateway_port(uint32_t uvm_id) {
    std::lock_guard lk(mutex_);
    Handle* handle = find_handle_locked(uvm_id);
    if (handle == nullptr) return std::nullopt;
    return handle->bridge->port();
}

std::optional<std::chrono::steady_clock::time_point> TenantService::first_outbound_at(
    uint32_t uvm_id) {
    std::lock_guard lk(mutex_);
    Handle* handle = find_handle_locked(uvm_id);
    if (handle == nullptr) return std::nullopt;
    return handle->bridge->first_outbound_at();
}

std::filesystem::path TenantService::handle_scratch_root(uint32_t uvm_id) {
    std::lock_guard lk(mutex_);
    Handle* handle = find_handle_locked(uvm_id);
    return handle == nullptr ? std::filesystem::path{} : handle->backend->scratch_root();
}

std::string TenantService::fingerprint() const {
    std::lock_guard lk(mutex_);
    uint64_t hash = 1469598103934665603ull;  // FNV-1a
    auto mix = [&hash](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            hash ^= (v >> (8 * i)) & 0xFF;
            hash *= 1099511628211ull;
        }
    };
    mix(config_.worker_cap);
    mix(config_.transport_buffer_bytes);
    mix(static_cast<uint64_t>(config_.filter.default_verdict));
    mix(config_.filter.call_rules.size());
    mix(config_.filter.op_rules.size());
    mix(snapshot_image_.size());
    for (size_t i = 0; i < snapshot_image_.size(); i += 4096) {
        mix(std::to_integer<uint64_t>(snapshot_image_[i]));
    }
    mix(handles_.size());
    mix(bindings_.size());
    mix(dispatched_.load(std::memory_order_relaxed));
    char out[32];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(hash));
    return out;
}

util::Result<uint16_t, int> TenantService::start_admin() {
    auto listener = util::TcpListener::bind(0);
    if (!listener) return EADDRINUSE;
    admin_listener_ = std::move(*listener);
    admin_thread_ = std::thread([this] { admin_loop(); });
    return admin_listener_.port();
}

void TenantService::admin_loop() {
    for (;;) {
        {
            std::lock_guard lk(mutex_);
            if (stopping_) return;
        }
        auto conn = admin_listener_.accept(std::chrono::milliseconds(50));
        if (!conn) continue;
        for (;;) {
            auto line = conn->read_line(std::chrono::milliseconds(1000));
            if (!line.has_value()) break;
            nlohmann::json reply;
            try {
                auto cmd = nlohmann::json::parse(*line);
                std::string op = cmd.value("cmd", "");
                if (op == "stats") {
                    auto s = stats();
                    reply = {{"tenant", tenant_id_},
                             {"dispatched", s.dispatched},
                             {"denied", s.denied},
                             {"backend_invocations", s.backend_invocations},
                             {"live_uvms", s.live_uvms},
                             {"live_workers", s.live_workers}};
                } else if (op == "register") {
                    uint32_t uvm_id = cmd.at("uvm_id").get<uint32_t>();
                    BridgeMode mode = cmd.value("stdio", "stream") == "pull"
                                          ? BridgeMode::Pull
                                          : BridgeMode::Stream;
                    auto reg = pre_register(uvm_id, mode);
                    if (reg.ok()) {
                        reply = {{"gateway_port", reg.value().gateway_port}};
                    } else {
                        reply = {{"error", to_string(reg.error())}};
                    }
                } else if (op == "shutdown") {
                    reply = {{"ok", true}};
                    conn->write_line(reply.dump());
                    shutdown();
                    return;
                } else {
                    reply = {{"error", "unknown_command"}};
                }
            } catch (const std::exception& e) {
                reply = {{"error", e.what()}};
            }
            if (!conn->write_line(reply.dump())) break;
        }
    }
}

}  // namespace mksv::svc
