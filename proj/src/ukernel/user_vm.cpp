#include "mksv/ukernel/user_vm.hpp"

#include <atomic>
#include <cstring>

#include "mksv/ikc/marshal.hpp"
#include "mksv/ukernel/posix_shim.hpp"

namespace mksv::uk {

using ikc::CallId;
using ikc::FrameKind;
using ikc::IkcFrame;
using ikc::MarshaledOp;
using ikc::OpTag;

namespace {

std::atomic<uint32_t> g_next_uvm_id{1};

uint64_t elapsed_us(std::chrono::steady_clock::time_point since) {
    return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(
                                     std::chrono::steady_clock::now() - since)
                                     .count());
}

}  // namespace

const BootPhaseReport::Phase* BootPhaseReport::find(std::string_view name) const {
    for (const auto& phase : phases) {
        if (phase.name == name) return &phase;
    }
    return nullptr;
}

uint32_t UserVm::allocate_id() {
    return g_next_uvm_id.fetch_add(1, std::memory_order_relaxed);
}

Result<std::unique_ptr<UserVm>> UserVm::boot(const Manifest& manifest, BootMode mode,
                                             const UvmConfig& config,
                                             const ProgramRegistry& registry) {
    const ProgramMain* program = registry.find(manifest.entry);
    if (program == nullptr) return ErrorCode::BadFrame;
    if (manifest.initrd.size() > kInitrdMaxBytes) return ErrorCode::BadFrame;

    auto vm = std::unique_ptr<UserVm>(new UserVm());
    vm->uvm_id_ = allocate_id();
    vm->mode_ = mode;
    vm->manifest_ = manifest;
    vm->config_ = config;

    auto& phases = vm->report_.phases;
    auto timed = [&](const char* name, auto&& fn) {
        auto start = std::chrono::steady_clock::now();
        fn();
        phases.push_back({name, elapsed_us(start)});
    };

    timed("channel_setup", [&] {
        vm->channel_ = std::make_shared<ikc::IkcChannel>(config.context.bulk_timeout);
        if (mode == BootMode::Standalone) {
            vm->pump_thread_ = std::thread([raw = vm.get()] { raw->standalone_pump(); });
        }
    });
    timed("partition_create", [&] {
        vm->context_ =
            std::make_unique<GuestContext>(vm->uvm_id_, vm->channel_, config.context);
    });

    Result<void> stage_result = {};
    timed("vmem_create", [&] { stage_result = vm->context_->create_vmem(); });
    if (!stage_result.ok()) {
        vm->channel_->shutdown();
        if (vm->pump_thread_.joinable()) vm->pump_thread_.join();
        return stage_result.error();
    }
    timed("vcpu_create", [&] { vm->context_->create_vcpu(); });
    timed("kernel_load", [&] { stage_result = vm->context_->load_kernel_image(); });
    if (!stage_result.ok()) {
        vm->channel_->shutdown();
        if (vm->pump_thread_.joinable()) vm->pump_thread_.join();
        return stage_result.error();
    }
    timed("initrd_load", [&] { stage_result = vm->context_->load_initrd(manifest.initrd); });
    if (!stage_result.ok()) {
        vm->channel_->shutdown();
        if (vm->pump_thread_.joinable()) vm->pump_thread_.join();
        return stage_result.error();
    }
    timed("vcpu_reset", [&] { vm->context_->reset_vcpu(); });
    timed("thread_spawn", [&] {
        auto entry = [raw = vm.get(), program](GuestApi& api) -> int {
            PosixIo io(api, raw->manifest_.stdio);
            return (*program)(api, io, raw->manifest_);
        };
        vm->context_->spawn_initial(std::move(entry));
        vm->context_->start_poll_loop();
    });
    vm->exec_started_ = std::chrono::steady_clock::now();
    return vm;
}

UserVm::~UserVm() {
    terminate();
    if (context_) {
        context_->wait_completion(std::chrono::milliseconds(5000));
        context_->join_threads();
    }
    if (pump_thread_.joinable()) pump_thread_.join();
}

bool UserVm::wait(std::optional<std::chrono::milliseconds> timeout) {
    if (!context_->wait_completion(timeout)) return false;
    std::lock_guard lk(finalize_mutex_);
    if (!finalized_) {
        report_.phases.push_back({"guest_exec", elapsed_us(exec_started_)});
        auto teardown_start = std::chrono::steady_clock::now();
        channel_->shutdown();
        stdio_cv_.notify_all();
        context_->join_threads();
        if (pump_thread_.joinable()) pump_thread_.join();
        report_.phases.push_back({"exit_handling", elapsed_us(teardown_start)});
        report_.total_micros = 0;
        for (const auto& phase : report_.phases) report_.total_micros += phase.micros;
        finalized_ = true;
    }
    return true;
}

int UserVm::exit_status() {
    return context_->process_status();
}

void UserVm::terminate() {
    if (context_) context_->terminate();
    if (channel_) channel_->shutdown();
    stdio_cv_.notify_all();
}

// --- standalone supervisor endpoint ------------------------------------------

void UserVm::feed_stdin(std::span<const std::byte> data) {
    if (manifest_.stdio == StdioMode::Stream) {
        // eager framed delivery, credit per frame
        size_t off = 0;
        while (off < data.size()) {
            size_t n = std::min(data.size() - off, ikc::kInlinePayloadMax);
            IkcFrame frame;
            frame.kind = FrameKind::Command;
            frame.uvm_id = uvm_id_;
            frame.thread_id = ikc::kAnyThreadId;
            frame.call_id = CallId::kRecv;
            frame.payload.assign(data.begin() + static_cast<ptrdiff_t>(off),
                                 data.begin() + static_cast<ptrdiff_t>(off + n));
            channel_->host_send(frame);
            off += n;
        }
        return;
    }
    std::lock_guard lk(stdio_mutex_);
    stdin_buffer_.insert(stdin_buffer_.end(), data.begin(), data.end());
    stdio_cv_.notify_all();
}

void UserVm::close_stdin() {
    if (manifest_.stdio == StdioMode::Stream) {
        IkcFrame frame;
        frame.kind = FrameKind::Command;
        frame.uvm_id = uvm_id_;
        frame.thread_id = ikc::kAnyThreadId;
        frame.call_id = CallId::kRecv;
        channel_->host_send(frame);  // empty payload marks EOF
        return;
    }
    std::lock_guard lk(stdio_mutex_);
    stdin_eof_ = true;
    stdio_cv_.notify_all();
}

std::vector<std::byte> UserVm::take_stdout() {
    std::lock_guard lk(stdio_mutex_);
    std::vector<std::byte> out = std::move(stdout_buffer_);
    stdout_buffer_.clear();
    return out;
}

std::optional<std::chrono::steady_clock::time_point> UserVm::first_output_at() {
    std::lock_guard lk(stdio_mutex_);
    return first_output_;
}

void UserVm::capture_output(std::span<const std::byte> data) {
    std::lock_guard lk(stdio_mutex_);
    if (!first_output_.has_value()) first_output_ = std::chrono::steady_clock::now();
    stdout_buffer_.insert(stdout_buffer_.end(), data.begin(), data.end());
}

void UserVm::standalone_pump() {
    for (;;) {
        auto frame = channel_->host_recv();
        if (!frame.ok()) return;
        handle_standalone_request(frame.value());
    }
}

void UserVm::handle_standalone_request(const IkcFrame& frame) {
    auto respond = [&](uint16_t status, std::vector<std::byte> payload) {
        IkcFrame resp;
        resp.kind = FrameKind::CallResponse;
        resp.uvm_id = frame.uvm_id;
        resp.thread_id = frame.thread_id;
        resp.call_id = frame.call_id;
        resp.status = status;
        resp.seq = frame.seq;
        resp.payload = std::move(payload);
        channel_->host_send(resp);
    };
    auto fail = [&](int err) {
        std::vector<std::byte> payload;
        ikc::append_u32(payload, static_cast<uint32_t>(err));
        respond(static_cast<uint16_t>(ErrorCode::BackendFailure), std::move(payload));
    };

    if (frame.kind == FrameKind::BulkReady) {
        // raw guest push lands on the supervisor's stdout endpoint
        auto info = ikc::decode_bulk_ready(frame.payload);
        if (!info.ok()) return;
        auto data = channel_->guest_to_host_bulk().pull(frame.seq, info.value().total_len,
                                                        channel_->bulk_timeout());
        if (data.ok()) capture_output(data.value());
        return;
    }
    if (frame.kind != FrameKind::CallRequest) return;
    if (frame.call_id != CallId::kSend) {
        respond(static_cast<uint16_t>(ErrorCode::UnknownCall), {});
        return;
    }

    auto op = ikc::unmarshal_op(frame.payload);
    if (!op.ok()) {
        fail(EBADMSG);
        return;
    }
    switch (op.value().tag) {
        case OpTag::SockSend:
        case OpTag::Write: {
            const auto& o = op.value();
            if (o.tag == OpTag::Write && o.fd > 2) {
                fail(ENOSYS);  // no file backend without a system service
                return;
            }
            if (!o.bulk) {
                capture_output(o.data);
                std::vector<std::byte> payload;
                ikc::append_u32(payload, static_cast<uint32_t>(o.data.size()));
                respond(ikc::kStatusOk, std::move(payload));
                return;
            }
            // accept, then rendezvous with the guest's push
            std::vector<std::byte> payload;
            ikc::append_u32(payload, o.count);
            respond(ikc::kStatusOk, std::move(payload));
            auto ready = channel_->host_recv();
            if (!ready.ok() || ready.value().kind != FrameKind::BulkReady) return;
            auto data = channel_->guest_to_host_bulk().pull(
                ready.value().seq, o.count, channel_->bulk_timeout());
            if (data.ok()) capture_output(data.value());
            return;
        }
        case OpTag::SockRecv: {
            const auto& o = op.value();
            std::vector<std::byte> data;
            {
                std::unique_lock lk(stdio_mutex_);
                stdio_cv_.wait(lk, [&] {
                    return !stdin_buffer_.empty() || stdin_eof_ || channel_->is_shutdown();
                });
                size_t n = std::min<size_t>(o.count, stdin_buffer_.size());
                data.assign(stdin_buffer_.begin(), stdin_buffer_.begin() + n);
                stdin_buffer_.erase(stdin_buffer_.begin(), stdin_buffer_.begin() + n);
            }
            if (!o.bulk) {
                respond(ikc::kStatusOk, std::move(data));
                return;
            }
            std::vector<std::byte> payload;
            ikc::append_u32(payload, static_cast<uint32_t>(data.size()));
            respond(ikc::kStatusOk, std::move(payload));
            if (data.empty()) return;
            IkcFrame ready;
            ready.kind = FrameKind::BulkReady;
            ready.uvm_id = frame.uvm_id;
            ready.thread_id = frame.thread_id;
            ready.call_id = CallId::kPull;
            ready.seq = frame.seq;
            ready.payload = ikc::encode_bulk_ready(
                {ikc::BulkDirection::Pull, data.size(), 1});
            channel_->host_send(ready);
            channel_->host_to_guest_bulk().push(frame.seq, std::move(data),
                                                channel_->bulk_timeout());
            return;
        }
        case OpTag::Clock: {
            std::vector<std::byte> payload;
            ikc::append_u64(payload, context_ ? context_->pv_clock_ns() : 0);
            respond(ikc::kStatusOk, std::move(payload));
            return;
        }
        default:
            fail(ENOSYS);
            return;
    }
}

}  // namespace mksv::uk
