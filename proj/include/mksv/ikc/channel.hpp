#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>

#include "mksv/ikc/bulk.hpp"
#include "mksv/ikc/control_page.hpp"
#include "mksv/ikc/frame.hpp"

namespace mksv::ikc {

/// Observer invoked for every frame crossing a channel; direction is
/// "to_guest" or "to_host". Used by the frame-dump facility and tests.
using FrameTap = std::function<void(const char* direction, std::span<const std::byte> raw,
                                    const IkcFrame& frame)>;

/// Installs a process-wide tap applied to channels created afterwards.
void set_global_frame_tap(FrameTap tap);
FrameTap global_frame_tap();

/// Duplex frame channel between a guest context and its supervisor/service
/// side. Frames travel encoded, so the wire format is exercised on every
/// hop. Guest-bound delivery is credit flow controlled through the control
/// page: one produce per frame enqueued, one consume per frame taken.
///
/// One bulk rendezvous exists per direction; transfers are tag-matched so
/// concurrent blocked operations from distinct threads cannot cross wires.
class IkcChannel {
  public:
    explicit IkcChannel(std::chrono::milliseconds bulk_timeout = kDefaultBulkTimeout);

    // Supervisor/service side.
    Result<void> host_send(const IkcFrame& frame);
    Result<IkcFrame> host_recv(std::optional<std::chrono::milliseconds> timeout = std::nullopt);

    // Guest side. guest_recv is the single credit consumer (the poll loop).
    Result<void> guest_send(const IkcFrame& frame);
    Result<IkcFrame> guest_recv();

    BulkRendezvous& guest_to_host_bulk() { return g2h_bulk_; }
    BulkRendezvous& host_to_guest_bulk() { return h2g_bulk_; }

    ControlPage& page() { return page_; }
    std::chrono::milliseconds bulk_timeout() const { return bulk_timeout_; }

    void shutdown();
    bool is_shutdown() const { return shutdown_.load(std::memory_order_acquire); }

    uint64_t frames_to_guest() const { return frames_to_guest_.load(std::memory_order_relaxed); }
    uint64_t frames_to_host() const { return frames_to_host_.load(std::memory_order_relaxed); }

    void set_tap(FrameTap tap);

  private:
    ControlPage page_;
    BulkRendezvous g2h_bulk_;
    BulkRendezvous h2g_bulk_;
    std::chrono::milliseconds bulk_timeout_;

    std::mutex to_guest_mutex_;
    std::deque<std::vector<std::byte>> to_guest_;

    std::mutex to_host_mutex_;
    std::condition_variable to_host_cv_;
    std::deque<std::vector<std::byte>> to_host_;

    std::atomic<bool> shutdown_{false};
    std::atomic<uint64_t> frames_to_guest_{0};
    std::atomic<uint64_t> frames_to_host_{0};

    std::mutex tap_mutex_;
    FrameTap tap_;
};

}  // namespace mksv::ikc
