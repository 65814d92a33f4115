#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace mksv::ctrl {

/// Pre-initialized resource pool. Acquiring from a non-empty pool does no
/// initialization work on the caller's path; dropping below the low-water
/// mark triggers an asynchronous refill. An empty pool with refill enabled
/// builds inline as a last resort and accounts for it, so callers can
/// assert that warm paths stayed clean.
template <typename T>
class ResourcePool {
  public:
    struct Acquired {
        T value;
        bool built_inline = false;
    };

    struct Stats {
        uint64_t acquired = 0;
        uint64_t released = 0;
        uint64_t inline_builds = 0;
        uint64_t refilled = 0;
        size_t free = 0;
    };

    ResourcePool(std::string kind, size_t initial, size_t low_water, bool refill_enabled,
                 std::function<T()> factory)
        : kind_(std::move(kind)),
          low_water_(low_water),
          refill_enabled_(refill_enabled),
          factory_(std::move(factory)) {
        for (size_t i = 0; i < initial; ++i) free_.push_back(factory_());
    }

    ~ResourcePool() {
        {
            std::lock_guard lk(mutex_);
            stopping_ = true;
        }
        if (refill_thread_.joinable()) refill_thread_.join();
    }

    std::optional<Acquired> acquire() {
        std::unique_lock lk(mutex_);
        if (!free_.empty()) {
            Acquired out{std::move(free_.front()), false};
            free_.pop_front();
            ++acquired_;
            maybe_refill_locked();
            return out;
        }
        if (!refill_enabled_) return std::nullopt;
        ++acquired_;
        ++inline_builds_;
        lk.unlock();
        return Acquired{factory_(), true};
    }

    void release(T value) {
        std::lock_guard lk(mutex_);
        free_.push_back(std::move(value));
        ++released_;
    }

    Stats stats() {
        std::lock_guard lk(mutex_);
        return Stats{acquired_, released_, inline_builds_, refilled_, free_.size()};
    }

    const std::string& kind() const { return kind_; }

  private:
    void maybe_refill_locked() {
        if (!refill_enabled_ || free_.size() >= low_water_ || refilling_ || stopping_) return;
        refilling_ = true;
        if (refill_thread_.joinable()) refill_thread_.join();
        refill_thread_ = std::thread([this] {
            for (;;) {
                {
                    std::lock_guard lk(mutex_);
                    if (stopping_ || free_.size() >= low_water_) {
                        refilling_ = false;
                        return;
                    }
                }
                T item = factory_();
                std::lock_guard lk(mutex_);
                free_.push_back(std::move(item));
                ++refilled_;
            }
        });
    }

    const std::string kind_;
    const size_t low_water_;
    const bool refill_enabled_;
    std::function<T()> factory_;

    std::mutex mutex_;
    std::deque<T> free_;
    bool refilling_ = false;
    bool stopping_ = false;
    std::thread refill_thread_;

    uint64_t acquired_ = 0;
    uint64_t released_ = 0;
    uint64_t inline_builds_ = 0;
    uint64_t refilled_ = 0;
};

}  // namespace mksv::ctrl
