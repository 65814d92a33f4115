#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <mutex>

#include "mksv/ikc/error.hpp"

namespace mksv::ikc {

/// Shared synchronization state between a guest context and its supervisor:
/// a credit counter gating guest-bound message delivery, the halted flag,
/// an interrupt-pending bitset and the paravirtualized clock.
///
/// Exactly one consumer (the guest poll loop) and one producer (the
/// supervisor side) may operate on a page. The consumer is the only party
/// that decrements credits; the producer is the only one that increments.
/// The halted flag is set by the consumer before blocking and cleared by
/// whichever party wakes it.
class ControlPage {
  public:
    struct Stats {
        uint64_t produces = 0;
        uint64_t consumes = 0;
        uint64_t wakes = 0;
        uint64_t halted_transitions = 0;
    };

    /// Consumes one credit, blocking in the halted state while none are
    /// available. Each successful return matches exactly one produce().
    Result<void> consume();

    /// Grants one credit. If the consumer was observed halted, wakes it and
    /// clears the flag. Returns whether a wake was delivered.
    bool produce();

    /// Tears the page down; a blocked consumer returns VmTerminated.
    void shutdown();

    uint32_t credits() const { return credits_.load(std::memory_order_acquire); }
    bool halted() const { return halted_.load(std::memory_order_acquire); }
    bool torn_down() const { return torn_down_.load(std::memory_order_acquire); }

    void set_clock_ns(uint64_t ns) { pv_clock_ns_.store(ns, std::memory_order_release); }
    uint64_t clock_ns() const { return pv_clock_ns_.load(std::memory_order_acquire); }

    void raise_irq(uint32_t bit) { irq_pending_.fetch_or(1u << bit, std::memory_order_acq_rel); }
    uint32_t take_irqs() { return irq_pending_.exchange(0, std::memory_order_acq_rel); }

    Stats stats() const;

  private:
    std::atomic<uint32_t> credits_{0};
    std::atomic<bool> halted_{false};
    std::atomic<uint32_t> irq_pending_{0};
    std::atomic<uint64_t> pv_clock_ns_{0};
    std::atomic<bool> torn_down_{false};

    mutable std::mutex mutex_;
    std::condition_variable cv_;

    std::atomic<uint64_t> produces_{0};
    std::atomic<uint64_t> consumes_{0};
    std::atomic<uint64_t> wakes_{0};
    std::atomic<uint64_t> halted_transitions_{0};
};

}  // namespace mksv::ikc
