#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "mksv/ikc/error.hpp"

namespace mksv::ikc {

inline constexpr uint64_t kGuestPageSize = 4096;
inline constexpr std::chrono::milliseconds kDefaultBulkTimeout{5000};

enum class BulkDirection : uint8_t { Push = 0, Pull = 1 };

struct BulkSegment {
    uint64_t offset = 0;
    uint64_t length = 0;

    bool operator==(const BulkSegment&) const = default;
};

/// Scatter/gather description of guest memory for rendezvous bulk transfer.
/// In strict page mode every segment must lie within a single 4 KiB page.
struct BulkDescriptor {
    BulkDirection direction = BulkDirection::Push;
    std::vector<BulkSegment> segments;
    uint64_t total_len = 0;
    bool strict_page_mode = false;
};

bool segment_spans_page(const BulkSegment& seg);

/// Validates segments against the guest image bounds and, when requested,
/// the single-page rule. BadFrame covers empty, zero-length, overlapping or
/// out-of-bounds segments; CrossesPageBoundary fires only for otherwise
/// valid descriptors whose segments straddle a page edge in strict mode.
Result<BulkDescriptor> bulk_prepare(BulkDirection direction,
                                    std::span<const BulkSegment> segments,
                                    bool strict_page_mode,
                                    uint64_t image_size);

/// Single-slot rendezvous buffer joining one pusher and one puller. The
/// pusher parks its gathered bytes under a tag and blocks until the puller
/// has consumed them (the transfer-complete acknowledgment); the puller
/// blocks until a matching tag is offered. Both sides are part of the same
/// trust domain, so a missed rendezvous signals a bug and times out.
class BulkRendezvous {
  public:
    Result<size_t> push(uint64_t tag, std::vector<std::byte> data,
                        std::chrono::milliseconds timeout);
    Result<std::vector<std::byte>> pull(uint64_t tag, size_t expected_len,
                                        std::chrono::milliseconds timeout);
    void shutdown();

  private:
    enum class SlotState { Empty, Ready, Done };

    std::mutex mutex_;
    std::condition_variable cv_;
    SlotState state_ = SlotState::Empty;
    uint64_t tag_ = 0;
    std::vector<std::byte> data_;
    bool torn_down_ = false;
};

/// Concatenates descriptor segments out of the image, in order.
std::vector<std::byte> gather_segments(const BulkDescriptor& desc,
                                       std::span<const std::byte> image);

/// Scatters a gathered buffer back into the descriptor segments, in order.
/// Touches no byte outside the segments.
void scatter_segments(const BulkDescriptor& desc, std::span<std::byte> image,
                      std::span<const std::byte> data);

/// Gathers descriptor segments from the image in order and delivers them to
/// the rendezvous in a single copy. Blocks until the receiver acknowledges.
Result<size_t> bulk_push(const BulkDescriptor& desc, std::span<const std::byte> image,
                         BulkRendezvous& rendezvous, uint64_t tag,
                         std::chrono::milliseconds timeout);

/// Receives total_len bytes from the rendezvous and scatters them into the
/// descriptor segments in order. Touches no byte outside the segments.
Result<size_t> bulk_pull(const BulkDescriptor& desc, std::span<std::byte> image,
                         BulkRendezvous& rendezvous, uint64_t tag,
                         std::chrono::milliseconds timeout);

/// Direction-dispatching wrapper over bulk_push / bulk_pull.
Result<size_t> bulk_transfer(const BulkDescriptor& desc, std::span<std::byte> image,
                             BulkRendezvous& rendezvous, uint64_t tag,
                             std::chrono::milliseconds timeout);

}  // namespace mksv::ikc
