#include "mksv/ukernel/guest_context.hpp"

#include <algorithm>
#include <cstring>

#include "mksv/ikc/marshal.hpp"

namespace mksv::uk {

using ikc::CallId;
using ikc::FrameKind;
using ikc::IkcFrame;

namespace {

// Deterministic stand-in for the kernel blob loaded at boot.
const std::vector<std::byte>& kernel_blob() {
    static const std::vector<std::byte> blob = [] {
        std::vector<std::byte> b(kKernelImageBytes);
        uint64_t x = 0x9E3779B97F4A7C15ull;
        for (size_t i = 0; i < b.size(); ++i) {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            b[i] = static_cast<std::byte>(x & 0xFF);
        }
        return b;
    }();
    return blob;
}

uint64_t steady_ns() {
    return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                     std::chrono::steady_clock::now().time_since_epoch())
                                     .count());
}

constexpr uint64_t align_up(uint64_t v, uint64_t a) {
    return (v + a - 1) / a * a;
}

}  // namespace

GuestContext::GuestContext(uint32_t uvm_id, std::shared_ptr<ikc::IkcChannel> channel,
                           ContextConfig config)
    : uvm_id_(uvm_id), channel_(std::move(channel)), config_(config) {}

GuestContext::~GuestContext() {
    terminate();
    channel_->shutdown();
    join_threads();
}

Result<void> GuestContext::create_vmem() {
    if (config_.image_bytes < kMinImageBytes) return ErrorCode::BadFrame;
    image_.assign(config_.image_bytes, std::byte{0});
    return {};
}

void GuestContext::create_vcpu() {
    std::lock_guard lk(mutex_);
    run_queue_.clear();
    current_.reset();
    vcpu_ready_ = true;
}

Result<void> GuestContext::load_kernel_image() {
    if (image_.size() < kKernelImageBytes) return ErrorCode::BadFrame;
    const auto& blob = kernel_blob();
    std::memcpy(image_.data(), blob.data(), blob.size());
    return {};
}

Result<void> GuestContext::load_initrd(std::span<const std::byte> blob) {
    if (blob.size() > kInitrdMaxBytes) return ErrorCode::BadFrame;
    if (image_.size() < kInitrdBase + blob.size()) return ErrorCode::BadFrame;
    if (!blob.empty()) std::memcpy(image_.data() + kInitrdBase, blob.data(), blob.size());
    return {};
}

void GuestContext::reset_vcpu() {
    std::lock_guard lk(mutex_);
    clock_anchor_ = std::chrono::steady_clock::now();
    clock_base_ns_ = steady_ns();
    channel_->page().set_clock_ns(clock_base_ns_);
}

Tid GuestContext::spawn_initial(GuestEntry entry) {
    std::lock_guard lk(mutex_);
    return spawn_thread_locked(std::move(entry));
}

Tid GuestContext::spawn_thread_locked(GuestEntry entry) {
    Tid tid = next_tid_++;
    auto rec = std::make_unique<ThreadRec>();
    rec->tid = tid;
    rec->state = ThreadState::Runnable;
    auto* raw = rec.get();
    threads_.emplace(tid, std::move(rec));
    ++live_threads_;
    run_queue_.push_back(tid);
    schedule_locked();
    raw->os_thread = std::thread([this, tid, fn = std::move(entry)]() mutable {
        trampoline(tid, std::move(fn));
    });
    return tid;
}

void GuestContext::start_poll_loop() {
    poll_thread_ = std::thread([this] { poll_loop(); });
}

void GuestContext::trampoline(Tid tid, GuestEntry entry) {
    {
        std::unique_lock lk(mutex_);
        if (!wait_for_core(lk, tid)) {
            lk.unlock();
            finalize_thread(tid, -1);
            return;
        }
    }
    int value = -1;
    try {
        GuestApi api(*this, tid);
        value = entry(api);
    } catch (const GuestUnwind& u) {
        value = u.value;
    } catch (...) {
        value = -1;
    }
    finalize_thread(tid, value);
}

void GuestContext::finalize_thread(Tid tid, int value) {
    std::lock_guard lk(mutex_);
    auto& t = *threads_.at(tid);
    t.state = ThreadState::Exited;
    t.exit_value = value;
    for (Tid waiter : t.join_waiters) wake_locked(waiter);
    t.join_waiters.clear();
    std::erase(recv_waiters_, tid);
    if (tid == 0 && !process_status_set_) {
        process_status_ = value;
        process_status_set_ = true;
    }
    if (current_ == tid) {
        current_.reset();
    }
    schedule_locked();
    --live_threads_;
    if (live_threads_ == 0) {
        completed_ = true;
        completion_cv_.notify_all();
    }
}

void GuestContext::schedule_locked() {
    if (current_.has_value()) return;
    while (!run_queue_.empty()) {
        Tid next = run_queue_.front();
        run_queue_.pop_front();
        auto it = threads_.find(next);
        if (it == threads_.end() || it->second->state != ThreadState::Runnable) continue;
        current_ = next;
        it->second->cv.notify_all();
        return;
    }
}

void GuestContext::wake_locked(Tid tid) {
    auto it = threads_.find(tid);
    if (it == threads_.end()) return;
    auto& t = *it->second;
    if (t.state != ThreadState::Blocked) return;
    t.state = ThreadState::Runnable;
    run_queue_.push_back(tid);
    schedule_locked();
}

bool GuestContext::wait_for_core(std::unique_lock<std::mutex>& lk, Tid tid) {
    auto& t = *threads_.at(tid);
    t.cv.wait(lk, [&] { return terminated_ || current_ == tid; });
    return !terminated_ && current_ == tid;
}

bool GuestContext::block_until(std::unique_lock<std::mutex>& lk, Tid tid,
                               const std::function<bool()>& pred) {
    auto& t = *threads_.at(tid);
    while (!pred()) {
        if (terminated_) return false;
        t.state = ThreadState::Blocked;
        if (current_ == tid) {
            current_.reset();
            schedule_locked();
        }
        t.cv.wait(lk, [&] {
            return terminated_ || (t.state == ThreadState::Runnable && current_ == tid);
        });
        if (terminated_) return false;
    }
    return true;
}

Result<size_t> GuestContext::run_blocking_unlocked(std::unique_lock<std::mutex>& lk, Tid tid,
                                                   const std::function<Result<size_t>()>& op) {
    auto& t = *threads_.at(tid);
    t.state = ThreadState::Blocked;
    if (current_ == tid) {
        current_.reset();
        schedule_locked();
    }
    lk.unlock();
    auto result = op();
    lk.lock();
    if (terminated_) return ErrorCode::VmTerminated;
    t.state = ThreadState::Runnable;
    run_queue_.push_back(tid);
    schedule_locked();
    t.cv.wait(lk, [&] { return terminated_ || current_ == tid; });
    if (terminated_) return ErrorCode::VmTerminated;
    return result;
}

void GuestContext::terminate() {
    std::lock_guard lk(mutex_);
    terminate_locked();
}

void GuestContext::terminate_locked() {
    if (terminated_) return;
    terminated_ = true;
    channel_->shutdown();
    for (auto& [tid, rec] : threads_) rec->cv.notify_all();
    completion_cv_.notify_all();
}

bool GuestContext::terminated() const {
    std::lock_guard lk(mutex_);
    return terminated_;
}

bool GuestContext::wait_completion(std::optional<std::chrono::milliseconds> timeout) {
    std::unique_lock lk(mutex_);
    auto done = [&] { return completed_; };
    if (timeout) {
        return completion_cv_.wait_for(lk, *timeout, done);
    }
    completion_cv_.wait(lk, done);
    return true;
}

bool GuestContext::completed() const {
    std::lock_guard lk(mutex_);
    return completed_;
}

int GuestContext::process_status() {
    std::lock_guard lk(mutex_);
    return process_status_;
}

void GuestContext::join_threads() {
    // Collect handles under the lock, join outside it.
    std::vector<std::thread*> handles;
    {
        std::lock_guard lk(mutex_);
        for (auto& [tid, rec] : threads_) {
            if (rec->os_thread.joinable()) handles.push_back(&rec->os_thread);
        }
    }
    for (auto* h : handles) h->join();
    if (poll_thread_.joinable()) poll_thread_.join();
}

size_t GuestContext::thread_count() {
    std::lock_guard lk(mutex_);
    return threads_.size();
}

uint64_t GuestContext::pv_clock_ns() const {
    return steady_ns();
}

std::vector<ikc::CallId> GuestContext::kcall_trace() {
    std::lock_guard lk(mutex_);
    return trace_;
}

std::vector<std::tuple<CallId, uint64_t, uint64_t>> GuestContext::control_log() {
    std::lock_guard lk(mutex_);
    return control_log_;
}

std::vector<std::string> GuestContext::debug_log() {
    std::lock_guard lk(mutex_);
    return debug_log_;
}

std::vector<MemRegion> GuestContext::regions() {
    std::lock_guard lk(mutex_);
    std::vector<MemRegion> out;
    out.reserve(regions_.size());
    for (const auto& [base, region] : regions_) out.push_back(region);
    return out;
}

uint64_t GuestContext::register_entry(GuestEntry entry) {
    std::lock_guard lk(mutex_);
    entries_.push_back(std::move(entry));
    return entries_.size() - 1;
}

// --- poll loop --------------------------------------------------------------

void GuestContext::poll_loop() {
    for (;;) {
        auto frame = channel_->guest_recv();
        if (!frame.ok()) return;
        deliver(frame.value());
    }
}

void GuestContext::deliver(const IkcFrame& frame) {
    std::lock_guard lk(mutex_);
    if (terminated_) return;
    switch (frame.kind) {
        case FrameKind::CallResponse: {
            auto it = threads_.find(frame.thread_id);
            if (it == threads_.end()) return;
            auto& t = *it->second;
            if (t.wait_seq.has_value() && *t.wait_seq == frame.seq) {
                t.response = PendingResponse{frame.status, frame.payload};
                wake_locked(frame.thread_id);
            }
            return;
        }
        case FrameKind::Command: {
            if (frame.call_id == CallId::kTerminate) {
                terminate_locked();
                return;
            }
            if (frame.call_id != CallId::kRecv) return;
            if (frame.thread_id == ikc::kAnyThreadId) {
                any_inbox_.push_back(frame.payload);
                for (Tid waiter : recv_waiters_) {
                    auto it = threads_.find(waiter);
                    if (it != threads_.end() && it->second->state == ThreadState::Blocked) {
                        wake_locked(waiter);
                        break;
                    }
                }
            } else {
                auto it = threads_.find(frame.thread_id);
                if (it == threads_.end()) return;
                it->second->inbox.push_back(frame.payload);
                wake_locked(frame.thread_id);
            }
            return;
        }
        case FrameKind::BulkReady: {
            auto info = ikc::decode_bulk_ready(frame.payload);
            if (!info.ok()) return;
            auto it = threads_.find(frame.thread_id);
            if (it == threads_.end()) return;
            it->second->bulk_meta = BulkMeta{frame.seq, info.value().total_len};
            wake_locked(frame.thread_id);
            return;
        }
        default:
            return;  // CreditGrant / BulkComplete / stray requests
    }
}

// --- kernel call dispatch ----------------------------------------------------

Result<uint64_t> GuestContext::kcall(Tid tid, CallId id, const KcallArgs& args) {
    std::unique_lock lk(mutex_);
    if (terminated_) return ErrorCode::VmTerminated;
    auto it = threads_.find(tid);
    if (it == threads_.end()) return ErrorCode::BackendFailure;
    if (current_ != tid) return ErrorCode::BackendFailure;  // caller must hold the core
    if (config_.record_kcall_trace) trace_.push_back(id);

    if (ikc::is_remote(id)) return do_remote(lk, tid, id, args);
    return do_local(lk, tid, id, args);
}

Result<uint64_t> GuestContext::do_local(std::unique_lock<std::mutex>& lk, Tid tid, CallId id,
                                        const KcallArgs& args) {
    auto& t = *threads_.at(tid);
    switch (id) {
        case CallId::kGetpid:
            return static_cast<uint64_t>(uvm_id_);
        case CallId::kGettid:
            return static_cast<uint64_t>(tid);
        case CallId::kExit:
            process_status_ = static_cast<int>(args.regs[0]);
            process_status_set_ = true;
            terminate_locked();
            return args.regs[0];
        case CallId::kExitThread:
            return args.regs[0];  // unwind happens in GuestApi
        case CallId::kJoinThread:
            return do_join(lk, tid, static_cast<Tid>(args.regs[0]));
        case CallId::kCreateThread: {
            uint64_t index = args.regs[0];
            if (index >= entries_.size()) return ErrorCode::BackendFailure;
            GuestEntry entry = entries_[index];
            return static_cast<uint64_t>(spawn_thread_locked(std::move(entry)));
        }
        case CallId::kYield: {
            if (run_queue_.empty()) return 0;
            t.state = ThreadState::Runnable;
            run_queue_.push_back(tid);
            current_.reset();
            schedule_locked();
            t.cv.wait(lk, [&] { return terminated_ || current_ == tid; });
            if (terminated_) return ErrorCode::VmTerminated;
            return 0;
        }
        case CallId::kSleep:
            return do_sleep(lk, tid, args.regs[0]);
        case CallId::kResume: {
            auto target = threads_.find(static_cast<Tid>(args.regs[0]));
            if (target == threads_.end()) return ErrorCode::BackendFailure;
            if (target->second->sleeping && target->second->state == ThreadState::Blocked) {
                target->second->sleeping = false;
                wake_locked(target->first);
            }
            return 0;
        }
        case CallId::kMutexLock: {
            auto& m = mutexes_[args.regs[0]];
            if (!m.owner.has_value()) {
                m.owner = tid;
                return 0;
            }
            if (m.owner == tid) return ErrorCode::BackendFailure;  // non-recursive
            m.waiters.push_back(tid);
            uint64_t mid = args.regs[0];
            if (!block_until(lk, tid, [&, mid] { return mutexes_[mid].owner == tid; })) {
                std::erase(mutexes_[mid].waiters, tid);
                return ErrorCode::VmTerminated;
            }
            return 0;
        }
        case CallId::kMutexUnlock: {
            auto& m = mutexes_[args.regs[0]];
            if (m.owner != tid) return ErrorCode::BackendFailure;
            if (m.waiters.empty()) {
                m.owner.reset();
            } else {
                Tid next = m.waiters.front();
                m.waiters.pop_front();
                m.owner = next;  // direct handoff, FIFO
                wake_locked(next);
            }
            return 0;
        }
        case CallId::kCondWait: {
            uint64_t cid = args.regs[0];
            uint64_t mid = args.regs[1];
            auto& m = mutexes_[mid];
            if (m.owner != tid) return ErrorCode::BackendFailure;
            // release the mutex exactly like unlock
            if (m.waiters.empty()) {
                m.owner.reset();
            } else {
                Tid next = m.waiters.front();
                m.waiters.pop_front();
                m.owner = next;
                wake_locked(next);
            }
            conds_[cid].waiters.push_back({tid, mid});
            if (!block_until(lk, tid, [&, mid] { return mutexes_[mid].owner == tid; })) {
                return ErrorCode::VmTerminated;
            }
            return 0;
        }
        case CallId::kCondSignal: {
            auto& c = conds_[args.regs[0]];
            if (c.waiters.empty()) return 0;
            auto [waiter, mid] = c.waiters.front();
            c.waiters.pop_front();
            auto& m = mutexes_[mid];
            if (!m.owner.has_value()) {
                m.owner = waiter;
                wake_locked(waiter);
            } else {
                m.waiters.push_back(waiter);  // woken later by unlock handoff
            }
            return 1;
        }
        case CallId::kMmap:
            return do_mmap(args.regs[0]);
        case CallId::kMunmap:
            return do_munmap(args.regs[0], args.regs[1]);
        case CallId::kMctrl:
            control_log_.push_back({CallId::kMctrl, args.regs[0], args.regs[1]});
            return 0;
        case CallId::kMcopy:
            return do_mcopy(args.regs[0], args.regs[1], args.regs[2]);
        case CallId::kCapctl: {
            control_log_.push_back({CallId::kCapctl, args.regs[0], args.regs[1]});
            if (args.regs[0] == 1) capabilities_.insert(args.regs[1]);
            if (args.regs[0] == 2) capabilities_.erase(args.regs[1]);
            return capabilities_.size();
        }
        case CallId::kTerminate:
            terminate_locked();
            return 0;
        case CallId::kSetThreadDataArea:
            t.tls = args.regs[0];
            return 0;
        case CallId::kGetThreadDataArea:
            return t.tls;
        case CallId::kGettime: {
            uint64_t now = steady_ns();
            channel_->page().set_clock_ns(now);
            return now;
        }
        case CallId::kDebug:
            debug_log_.emplace_back(reinterpret_cast<const char*>(args.data_in.data()),
                                    args.data_in.size());
            return 0;
        case CallId::kMmioAlloc: {
            uint64_t window = next_mmio_window_++;
            mmio_windows_[window] = args.regs[0];
            return window;
        }
        case CallId::kMmioFree:
            if (mmio_windows_.erase(args.regs[0]) == 0) return ErrorCode::BackendFailure;
            return 0;
        case CallId::kMmioInfo: {
            auto win = mmio_windows_.find(args.regs[0]);
            if (win == mmio_windows_.end()) return ErrorCode::BackendFailure;
            return win->second;
        }
        case CallId::kPmioAlloc: {
            uint64_t port = next_pmio_port_++;
            pmio_ports_[port] = 0;
            return port;
        }
        case CallId::kPmioFree:
            if (pmio_ports_.erase(args.regs[0]) == 0) return ErrorCode::BackendFailure;
            return 0;
        case CallId::kPmioRead: {
            auto port = pmio_ports_.find(args.regs[0]);
            if (port == pmio_ports_.end()) return ErrorCode::BackendFailure;
            return port->second;
        }
        case CallId::kPmioWrite: {
            auto port = pmio_ports_.find(args.regs[0]);
            if (port == pmio_ports_.end()) return ErrorCode::BackendFailure;
            port->second = args.regs[1];
            return 0;
        }
        default:
            return ErrorCode::UnknownCall;
    }
}

Result<uint64_t> GuestContext::do_sleep(std::unique_lock<std::mutex>& lk, Tid tid, uint64_t ns) {
    auto& t = *threads_.at(tid);
    t.state = ThreadState::Blocked;
    t.sleeping = true;
    if (current_ == tid) {
        current_.reset();
        schedule_locked();
    }
    auto awake = [&] {
        return terminated_ || (t.state == ThreadState::Runnable && current_ == tid);
    };
    if (ns == 0) {
        // suspend until resumed
        t.cv.wait(lk, awake);
    } else {
        auto deadline = std::chrono::steady_clock::now() + std::chrono::nanoseconds(ns);
        while (!awake()) {
            if (t.cv.wait_until(lk, deadline) == std::cv_status::timeout) break;
        }
        if (!awake() && t.state == ThreadState::Blocked) {
            // timer expiry: move ourselves back onto the run queue
            t.state = ThreadState::Runnable;
            run_queue_.push_back(tid);
            schedule_locked();
            t.cv.wait(lk, awake);
        } else if (!awake()) {
            t.cv.wait(lk, awake);
        }
    }
    t.sleeping = false;
    if (terminated_) return ErrorCode::VmTerminated;
    return 0;
}

Result<uint64_t> GuestContext::do_join(std::unique_lock<std::mutex>& lk, Tid tid, Tid target) {
    if (target == tid) return ErrorCode::BackendFailure;
    auto it = threads_.find(target);
    if (it == threads_.end()) return ErrorCode::BackendFailure;
    if (it->second->state != ThreadState::Exited && it->second->state != ThreadState::Joined) {
        it->second->join_waiters.push_back(tid);
        bool ok = block_until(lk, tid, [&] {
            auto& rec = *threads_.at(target);
            return rec.state == ThreadState::Exited || rec.state == ThreadState::Joined;
        });
        if (!ok) return ErrorCode::VmTerminated;
    }
    auto& rec = *threads_.at(target);
    rec.state = ThreadState::Joined;
    return static_cast<uint64_t>(static_cast<int64_t>(rec.exit_value));
}

Result<uint64_t> GuestContext::do_mmap(uint64_t length) {
    if (length == 0) return ErrorCode::BackendFailure;
    uint64_t len = align_up(length, ikc::kGuestPageSize);
    uint64_t base = kUserArenaBase;
    for (const auto& [region_base, region] : regions_) {
        if (region_base >= base + len) break;
        base = std::max(base, region_base + region.length);
    }
    if (base + len > image_.size()) return ErrorCode::BackendFailure;
    regions_[base] = MemRegion{base, len, 0};
    return base;
}

Result<uint64_t> GuestContext::do_munmap(uint64_t base, uint64_t length) {
    auto it = regions_.find(base);
    if (it == regions_.end()) return ErrorCode::BackendFailure;
    if (it->second.length != align_up(length, ikc::kGuestPageSize)) {
        return ErrorCode::BackendFailure;
    }
    regions_.erase(it);
    return 0;
}

bool GuestContext::range_mapped(uint64_t base, uint64_t length) const {
    uint64_t pos = base;
    uint64_t end = base + length;
    while (pos < end) {
        auto it = regions_.upper_bound(pos);
        if (it == regions_.begin()) return false;
        --it;
        const auto& region = it->second;
        if (pos < region.base || pos >= region.base + region.length) return false;
        pos = region.base + region.length;
    }
    return true;
}

Result<uint64_t> GuestContext::do_mcopy(uint64_t dst, uint64_t src, uint64_t length) {
    if (length == 0) return 0;
    if (dst + length > image_.size() || src + length > image_.size()) {
        return ErrorCode::BackendFailure;
    }
    if (!range_mapped(dst, length) || !range_mapped(src, length)) {
        return ErrorCode::BackendFailure;
    }
    std::memmove(image_.data() + dst, image_.data() + src, length);
    return length;
}

Result<uint64_t> GuestContext::do_remote(std::unique_lock<std::mutex>& lk, Tid tid, CallId id,
                                         const KcallArgs& args) {
    auto& t = *threads_.at(tid);
    switch (id) {
        case CallId::kSend: {
            if (args.data_in.size() > ikc::kInlinePayloadMax) {
                return ErrorCode::PayloadTooLarge;
            }
            uint64_t seq = t.next_seq++;
            IkcFrame frame;
            frame.kind = FrameKind::CallRequest;
            frame.uvm_id = uvm_id_;
            frame.thread_id = tid;
            frame.call_id = CallId::kSend;
            frame.seq = seq;
            frame.payload.assign(args.data_in.begin(), args.data_in.end());
            auto sent = channel_->guest_send(frame);
            if (!sent.ok()) return sent.error();
            t.wait_seq = seq;
            t.response.reset();
            bool ok = block_until(lk, tid, [&] { return t.response.has_value(); });
            t.wait_seq.reset();
            if (!ok) return ErrorCode::VmTerminated;
            PendingResponse resp = std::move(*t.response);
            t.response.reset();
            t.last_reply = resp;
            size_t n = std::min(resp.payload.size(), args.data_out.size());
            if (n > 0) std::memcpy(args.data_out.data(), resp.payload.data(), n);
            // status in the high half, payload length in the low half
            return (static_cast<uint64_t>(resp.status) << 32) |
                   static_cast<uint64_t>(resp.payload.size());
        }
        case CallId::kRecv: {
            for (;;) {
                std::vector<std::byte> message;
                if (!t.inbox.empty()) {
                    message = std::move(t.inbox.front());
                    t.inbox.pop_front();
                } else if (!any_inbox_.empty()) {
                    message = std::move(any_inbox_.front());
                    any_inbox_.pop_front();
                } else {
                    recv_waiters_.push_back(tid);
                    bool ok = block_until(lk, tid, [&] {
                        return !t.inbox.empty() || !any_inbox_.empty();
                    });
                    std::erase(recv_waiters_, tid);
                    if (!ok) return ErrorCode::VmTerminated;
                    continue;
                }
                size_t n = std::min(message.size(), args.data_out.size());
                if (n > 0) std::memcpy(args.data_out.data(), message.data(), n);
                return message.size();
            }
        }
        case CallId::kPush: {
            auto segments = ikc::decode_segments(args.data_in);
            if (!segments.ok()) return segments.error();
            auto desc = ikc::bulk_prepare(ikc::BulkDirection::Push, segments.value(),
                                          config_.strict_page_mode, image_.size());
            if (!desc.ok()) return desc.error();
            uint64_t seq = t.next_seq++;
            IkcFrame frame;
            frame.kind = FrameKind::BulkReady;
            frame.uvm_id = uvm_id_;
            frame.thread_id = tid;
            frame.call_id = CallId::kPush;
            frame.seq = seq;
            frame.payload = ikc::encode_bulk_ready(
                {ikc::BulkDirection::Push, desc.value().total_len,
                 static_cast<uint32_t>(desc.value().segments.size())});
            auto sent = channel_->guest_send(frame);
            if (!sent.ok()) return sent.error();
            auto gathered = ikc::gather_segments(desc.value(), image_);
            auto moved = run_blocking_unlocked(lk, tid, [&]() -> Result<size_t> {
                return channel_->guest_to_host_bulk().push(seq, std::move(gathered),
                                                           config_.bulk_timeout);
            });
            if (!moved.ok()) return moved.error();
            return static_cast<uint64_t>(moved.value());
        }
        case CallId::kPull: {
            auto segments = ikc::decode_segments(args.data_in);
            if (!segments.ok()) return segments.error();
            auto desc = ikc::bulk_prepare(ikc::BulkDirection::Pull, segments.value(),
                                          config_.strict_page_mode, image_.size());
            if (!desc.ok()) return desc.error();
            bool ok = block_until(lk, tid, [&] { return t.bulk_meta.has_value(); });
            if (!ok) return ErrorCode::VmTerminated;
            BulkMeta meta = *t.bulk_meta;
            t.bulk_meta.reset();
            if (meta.total_len != desc.value().total_len) return ErrorCode::BadFrame;
            std::vector<std::byte> data;
            auto moved = run_blocking_unlocked(lk, tid, [&]() -> Result<size_t> {
                auto pulled = channel_->host_to_guest_bulk().pull(meta.tag, meta.total_len,
                                                                  config_.bulk_timeout);
                if (!pulled.ok()) return pulled.error();
                data = pulled.take();
                return data.size();
            });
            if (!moved.ok()) return moved.error();
            ikc::scatter_segments(desc.value(), image_, data);
            return static_cast<uint64_t>(desc.value().total_len);
        }
        default:
            return ErrorCode::UnknownCall;
    }
}

// --- GuestApi ----------------------------------------------------------------

uint32_t GuestApi::uvm_id() const {
    return ctx_.uvm_id();
}

bool GuestApi::strict_page_mode() const {
    return ctx_.config().strict_page_mode;
}

Result<uint64_t> GuestApi::kcall(CallId id, const KcallArgs& args) {
    return ctx_.kcall(tid_, id, args);
}

Result<uint64_t> GuestApi::checked(Result<uint64_t> r) {
    if (!r.ok() && r.error() == ErrorCode::VmTerminated) throw GuestUnwind{-1};
    return r;
}

uint64_t GuestApi::getpid() {
    auto r = checked(kcall(CallId::kGetpid));
    return r.ok() ? r.value() : 0;
}

uint64_t GuestApi::gettid() {
    auto r = checked(kcall(CallId::kGettid));
    return r.ok() ? r.value() : 0;
}

Result<Tid> GuestApi::create_thread(std::function<int(GuestApi&)> entry) {
    uint64_t index = ctx_.register_entry(std::move(entry));
    KcallArgs args;
    args.regs[0] = index;
    auto r = checked(kcall(CallId::kCreateThread, args));
    if (!r.ok()) return r.error();
    return static_cast<Tid>(r.value());
}

Result<int> GuestApi::join_thread(Tid target) {
    KcallArgs args;
    args.regs[0] = target;
    auto r = checked(kcall(CallId::kJoinThread, args));
    if (!r.ok()) return r.error();
    return static_cast<int>(static_cast<int64_t>(r.value()));
}

void GuestApi::exit_thread(int value) {
    KcallArgs args;
    args.regs[0] = static_cast<uint64_t>(value);
    kcall(CallId::kExitThread, args);
    throw GuestUnwind{value};
}

void GuestApi::exit_process(int value) {
    KcallArgs args;
    args.regs[0] = static_cast<uint64_t>(value);
    kcall(CallId::kExit, args);
    throw GuestUnwind{value};
}

Result<void> GuestApi::yield() {
    auto r = checked(kcall(CallId::kYield));
    if (!r.ok()) return r.error();
    return {};
}

Result<void> GuestApi::sleep_ns(uint64_t ns) {
    KcallArgs args;
    args.regs[0] = ns;
    auto r = checked(kcall(CallId::kSleep, args));
    if (!r.ok()) return r.error();
    return {};
}

Result<void> GuestApi::resume(Tid target) {
    KcallArgs args;
    args.regs[0] = target;
    auto r = checked(kcall(CallId::kResume, args));
    if (!r.ok()) return r.error();
    return {};
}

Result<void> GuestApi::mutex_lock(uint64_t id) {
    KcallArgs args;
    args.regs[0] = id;
    auto r = checked(kcall(CallId::kMutexLock, args));
    if (!r.ok()) return r.error();
    return {};
}

Result<void> GuestApi::mutex_unlock(uint64_t id) {
    KcallArgs args;
    args.regs[0] = id;
    auto r = checked(kcall(CallId::kMutexUnlock, args));
    if (!r.ok()) return r.error();
    return {};
}

Result<void> GuestApi::cond_wait(uint64_t cond_id, uint64_t mutex_id) {
    KcallArgs args;
    args.regs[0] = cond_id;
    args.regs[1] = mutex_id;
    auto r = checked(kcall(CallId::kCondWait, args));
    if (!r.ok()) return r.error();
    return {};
}

Result<void> GuestApi::cond_signal(uint64_t cond_id) {
    KcallArgs args;
    args.regs[0] = cond_id;
    auto r = checked(kcall(CallId::kCondSignal, args));
    if (!r.ok()) return r.error();
    return {};
}

Result<uint64_t> GuestApi::mmap(uint64_t length) {
    KcallArgs args;
    args.regs[0] = length;
    return checked(kcall(CallId::kMmap, args));
}

Result<void> GuestApi::munmap(uint64_t base, uint64_t length) {
    KcallArgs args;
    args.regs[0] = base;
    args.regs[1] = length;
    auto r = checked(kcall(CallId::kMunmap, args));
    if (!r.ok()) return r.error();
    return {};
}

Result<void> GuestApi::mcopy(uint64_t dst, uint64_t src, uint64_t length) {
    KcallArgs args;
    args.regs[0] = dst;
    args.regs[1] = src;
    args.regs[2] = length;
    auto r = checked(kcall(CallId::kMcopy, args));
    if (!r.ok()) return r.error();
    return {};
}

Result<void> GuestApi::mctrl(uint64_t code, uint64_t arg) {
    KcallArgs args;
    args.regs[0] = code;
    args.regs[1] = arg;
    auto r = checked(kcall(CallId::kMctrl, args));
    if (!r.ok()) return r.error();
    return {};
}

std::span<std::byte> GuestApi::image() {
    return ctx_.image();
}

Result<uint64_t> GuestApi::capctl(uint64_t code, uint64_t arg) {
    KcallArgs args;
    args.regs[0] = code;
    args.regs[1] = arg;
    return checked(kcall(CallId::kCapctl, args));
}

Result<void> GuestApi::set_tls(uint64_t value) {
    KcallArgs args;
    args.regs[0] = value;
    auto r = checked(kcall(CallId::kSetThreadDataArea, args));
    if (!r.ok()) return r.error();
    return {};
}

Result<uint64_t> GuestApi::get_tls() {
    return checked(kcall(CallId::kGetThreadDataArea));
}

Result<uint64_t> GuestApi::gettime_ns() {
    return checked(kcall(CallId::kGettime));
}

Result<void> GuestApi::debug(std::string_view message) {
    KcallArgs args;
    args.data_in = std::as_bytes(std::span(message.data(), message.size()));
    auto r = checked(kcall(CallId::kDebug, args));
    if (!r.ok()) return r.error();
    return {};
}

Result<uint64_t> GuestApi::mmio_alloc(uint64_t length) {
    KcallArgs args;
    args.regs[0] = length;
    return checked(kcall(CallId::kMmioAlloc, args));
}

Result<void> GuestApi::mmio_free(uint64_t window) {
    KcallArgs args;
    args.regs[0] = window;
    auto r = checked(kcall(CallId::kMmioFree, args));
    if (!r.ok()) return r.error();
    return {};
}

Result<uint64_t> GuestApi::mmio_info(uint64_t window) {
    KcallArgs args;
    args.regs[0] = window;
    return checked(kcall(CallId::kMmioInfo, args));
}

Result<uint64_t> GuestApi::pmio_alloc() {
    return checked(kcall(CallId::kPmioAlloc));
}

Result<void> GuestApi::pmio_free(uint64_t port) {
    KcallArgs args;
    args.regs[0] = port;
    auto r = checked(kcall(CallId::kPmioFree, args));
    if (!r.ok()) return r.error();
    return {};
}

Result<uint64_t> GuestApi::pmio_read(uint64_t port) {
    KcallArgs args;
    args.regs[0] = port;
    return checked(kcall(CallId::kPmioRead, args));
}

Result<void> GuestApi::pmio_write(uint64_t port, uint64_t value) {
    KcallArgs args;
    args.regs[0] = port;
    args.regs[1] = value;
    auto r = checked(kcall(CallId::kPmioWrite, args));
    if (!r.ok()) return r.error();
    return {};
}

Result<GuestApi::RemoteReply> GuestApi::call_remote(std::span<const std::byte> payload) {
    std::array<std::byte, ikc::kInlinePayloadMax> buf;
    KcallArgs args;
    args.data_in = payload;
    args.data_out = buf;
    auto r = checked(kcall(CallId::kSend, args));
    if (!r.ok()) return r.error();
    RemoteReply reply;
    reply.status = static_cast<uint16_t>(r.value() >> 32);
    size_t len = static_cast<size_t>(r.value() & 0xFFFFFFFFu);
    reply.payload.assign(buf.begin(), buf.begin() + std::min(len, buf.size()));
    return reply;
}

Result<void> GuestApi::send(std::span<const std::byte> payload) {
    auto reply = call_remote(payload);
    if (!reply.ok()) return reply.error();
    if (reply.value().status != ikc::kStatusOk) {
        return static_cast<ErrorCode>(reply.value().status);
    }
    return {};
}

Result<std::vector<std::byte>> GuestApi::recv() {
    std::array<std::byte, ikc::kInlinePayloadMax> buf;
    KcallArgs args;
    args.data_out = buf;
    auto r = checked(kcall(CallId::kRecv, args));
    if (!r.ok()) return r.error();
    size_t len = std::min(static_cast<size_t>(r.value()), buf.size());
    return std::vector<std::byte>(buf.begin(), buf.begin() + len);
}

Result<uint64_t> GuestApi::push(std::span<const ikc::BulkSegment> segments) {
    auto table = ikc::encode_segments(segments);
    if (!table.ok()) return table.error();
    KcallArgs args;
    args.data_in = table.value();
    return checked(kcall(CallId::kPush, args));
}

Result<uint64_t> GuestApi::pull(std::span<const ikc::BulkSegment> segments) {
    auto table = ikc::encode_segments(segments);
    if (!table.ok()) return table.error();
    KcallArgs args;
    args.data_in = table.value();
    return checked(kcall(CallId::kPull, args));
}

}  // namespace mksv::uk
