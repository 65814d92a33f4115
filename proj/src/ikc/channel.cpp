#include "mksv/ikc/channel.hpp"

namespace mksv::ikc {

namespace {

std::mutex g_tap_mutex;
FrameTap g_tap;

}  // namespace

void set_global_frame_tap(FrameTap tap) {
    std::lock_guard lk(g_tap_mutex);
    g_tap = std::move(tap);
}

FrameTap global_frame_tap() {
    std::lock_guard lk(g_tap_mutex);
    return g_tap;
}

IkcChannel::IkcChannel(std::chrono::milliseconds bulk_timeout)
    : bulk_timeout_(bulk_timeout), tap_(global_frame_tap()) {}

void IkcChannel::set_tap(FrameTap tap) {
    std::lock_guard lk(tap_mutex_);
    tap_ = std::move(tap);
}

Result<void> IkcChannel::host_send(const IkcFrame& frame) {
    if (is_shutdown()) return ErrorCode::VmTerminated;
    auto encoded = encode_frame(frame);
    if (!encoded.ok()) return encoded.error();
    {
        std::lock_guard lk(tap_mutex_);
        if (tap_) tap_("to_guest", encoded.value(), frame);
    }
    {
        std::lock_guard lk(to_guest_mutex_);
        to_guest_.push_back(encoded.take());
    }
    frames_to_guest_.fetch_add(1, std::memory_order_relaxed);
    page_.produce();
    return {};
}

Result<IkcFrame> IkcChannel::guest_recv() {
    auto ok = page_.consume();
    if (!ok.ok()) return ok.error();
    std::vector<std::byte> raw;
    {
        std::lock_guard lk(to_guest_mutex_);
        // One credit is produced per enqueued frame, so a consumed credit
        // guarantees a waiting frame.
        raw = std::move(to_guest_.front());
        to_guest_.pop_front();
    }
    return decode_frame(raw);
}

Result<void> IkcChannel::guest_send(const IkcFrame& frame) {
    if (is_shutdown()) return ErrorCode::VmTerminated;
    auto encoded = encode_frame(frame);
    if (!encoded.ok()) return encoded.error();
    {
        std::lock_guard lk(tap_mutex_);
        if (tap_) tap_("to_host", encoded.value(), frame);
    }
    {
        std::lock_guard lk(to_host_mutex_);
        to_host_.push_back(encoded.take());
    }
    frames_to_host_.fetch_add(1, std::memory_order_relaxed);
    to_host_cv_.notify_one();
    return {};
}

Result<IkcFrame> IkcChannel::host_recv(std::optional<std::chrono::milliseconds> timeout) {
    std::unique_lock lk(to_host_mutex_);
    auto ready = [&] { return is_shutdown() || !to_host_.empty(); };
    if (timeout) {
        if (!to_host_cv_.wait_for(lk, *timeout, ready)) return ErrorCode::Timeout;
    } else {
        to_host_cv_.wait(lk, ready);
    }
    if (to_host_.empty()) return ErrorCode::VmTerminated;
    std::vector<std::byte> raw = std::move(to_host_.front());
    to_host_.pop_front();
    lk.unlock();
    return decode_frame(raw);
}

void IkcChannel::shutdown() {
    shutdown_.store(true, std::memory_order_release);
    page_.shutdown();
    g2h_bulk_.shutdown();
    h2g_bulk_.shutdown();
    to_host_cv_.notify_all();
}

}  // namespace mksv::ikc
