#include "mksv/ikc/bulk.hpp"

#include <algorithm>
#include <cstring>

namespace mksv::ikc {

bool segment_spans_page(const BulkSegment& seg) {
    if (seg.length == 0) return false;
    return seg.offset / kGuestPageSize != (seg.offset + seg.length - 1) / kGuestPageSize;
}

Result<BulkDescriptor> bulk_prepare(BulkDirection direction,
                                    std::span<const BulkSegment> segments,
                                    bool strict_page_mode,
                                    uint64_t image_size) {
    if (segments.empty()) return ErrorCode::BadFrame;

    uint64_t total = 0;
    for (const auto& seg : segments) {
        if (seg.length == 0) return ErrorCode::BadFrame;
        if (seg.offset > image_size || image_size - seg.offset < seg.length) {
            return ErrorCode::BadFrame;
        }
        total += seg.length;
    }

    // Overlap check on a sorted copy; delivery order stays as given.
    std::vector<BulkSegment> sorted(segments.begin(), segments.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const BulkSegment& a, const BulkSegment& b) { return a.offset < b.offset; });
    for (size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i - 1].offset + sorted[i - 1].length > sorted[i].offset) {
            return ErrorCode::BadFrame;
        }
    }

    if (strict_page_mode) {
        for (const auto& seg : segments) {
            if (segment_spans_page(seg)) return ErrorCode::CrossesPageBoundary;
        }
    }

    BulkDescriptor desc;
    desc.direction = direction;
    desc.segments.assign(segments.begin(), segments.end());
    desc.total_len = total;
    desc.strict_page_mode = strict_page_mode;
    return desc;
}

Result<size_t> BulkRendezvous::push(uint64_t tag, std::vector<std::byte> data,
                                    std::chrono::milliseconds timeout) {
    std::unique_lock lk(mutex_);
    auto deadline = std::chrono::steady_clock::now() + timeout;
    if (!cv_.wait_until(lk, deadline, [&] { return torn_down_ || state_ == SlotState::Empty; })) {
        return ErrorCode::Timeout;
    }
    if (torn_down_) return ErrorCode::VmTerminated;

    size_t len = data.size();
    state_ = SlotState::Ready;
    tag_ = tag;
    data_ = std::move(data);
    cv_.notify_all();

    // Rendezvous: block until the receiver has taken and scattered the data.
    bool done = cv_.wait_until(lk, deadline, [&] {
        return torn_down_ || (state_ == SlotState::Done && tag_ == tag);
    });
    if (torn_down_) return ErrorCode::VmTerminated;
    if (!done) {
        // Reclaim the slot so a timed-out offer does not wedge the channel.
        if (state_ == SlotState::Ready && tag_ == tag) {
            state_ = SlotState::Empty;
            data_.clear();
        }
        return ErrorCode::Timeout;
    }
    state_ = SlotState::Empty;
    cv_.notify_all();
    return len;
}

Result<std::vector<std::byte>> BulkRendezvous::pull(uint64_t tag, size_t expected_len,
                                                    std::chrono::milliseconds timeout) {
    std::unique_lock lk(mutex_);
    auto deadline = std::chrono::steady_clock::now() + timeout;
    if (!cv_.wait_until(lk, deadline, [&] {
            return torn_down_ || (state_ == SlotState::Ready && tag_ == tag);
        })) {
        return ErrorCode::Timeout;
    }
    if (torn_down_) return ErrorCode::VmTerminated;
    if (data_.size() != expected_len) {
        // Size disagreement between the two ends; fail the transfer loudly.
        state_ = SlotState::Empty;
        data_.clear();
        cv_.notify_all();
        return ErrorCode::BadFrame;
    }
    std::vector<std::byte> out = std::move(data_);
    data_.clear();
    state_ = SlotState::Done;
    cv_.notify_all();
    return out;
}

void BulkRendezvous::shutdown() {
    std::lock_guard lk(mutex_);
    torn_down_ = true;
    cv_.notify_all();
}

std::vector<std::byte> gather_segments(const BulkDescriptor& desc,
                                       std::span<const std::byte> image) {
    std::vector<std::byte> gathered;
    gathered.reserve(desc.total_len);
    for (const auto& seg : desc.segments) {
        gathered.insert(gathered.end(), image.begin() + static_cast<ptrdiff_t>(seg.offset),
                        image.begin() + static_cast<ptrdiff_t>(seg.offset + seg.length));
    }
    return gathered;
}

void scatter_segments(const BulkDescriptor& desc, std::span<std::byte> image,
                      std::span<const std::byte> data) {
    size_t pos = 0;
    for (const auto& seg : desc.segments) {
        std::memcpy(image.data() + seg.offset, data.data() + pos, seg.length);
        pos += seg.length;
    }
}

Result<size_t> bulk_push(const BulkDescriptor& desc, std::span<const std::byte> image,
                         BulkRendezvous& rendezvous, uint64_t tag,
                         std::chrono::milliseconds timeout) {
    for (const auto& seg : desc.segments) {
        if (seg.offset + seg.length > image.size()) return ErrorCode::BadFrame;
    }
    return rendezvous.push(tag, gather_segments(desc, image), timeout);
}

Result<size_t> bulk_pull(const BulkDescriptor& desc, std::span<std::byte> image,
                         BulkRendezvous& rendezvous, uint64_t tag,
                         std::chrono::milliseconds timeout) {
    for (const auto& seg : desc.segments) {
        if (seg.offset + seg.length > image.size()) return ErrorCode::BadFrame;
    }
    auto data = rendezvous.pull(tag, desc.total_len, timeout);
    if (!data.ok()) return data.error();
    scatter_segments(desc, image, data.value());
    return static_cast<size_t>(desc.total_len);
}

Result<size_t> bulk_transfer(const BulkDescriptor& desc, std::span<std::byte> image,
                             BulkRendezvous& rendezvous, uint64_t tag,
                             std::chrono::milliseconds timeout) {
    if (desc.direction == BulkDirection::Push) {
        return bulk_push(desc, image, rendezvous, tag, timeout);
    }
    return bulk_pull(desc, image, rendezvous, tag, timeout);
}

}  // namespace mksv::ikc
