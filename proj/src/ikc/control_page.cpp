#include "mksv/ikc/control_page.hpp"

namespace mksv::ikc {

Result<void> ControlPage::consume() {
    for (;;) {
        uint32_t c = credits_.load(std::memory_order_seq_cst);
        while (c > 0) {
            if (credits_.compare_exchange_weak(c, c - 1, std::memory_order_seq_cst)) {
                consumes_.fetch_add(1, std::memory_order_relaxed);
                return {};
            }
        }
        if (torn_down_.load(std::memory_order_seq_cst)) return ErrorCode::VmTerminated;

        std::unique_lock lk(mutex_);
        if (torn_down_.load(std::memory_order_seq_cst)) return ErrorCode::VmTerminated;
        halted_.store(true, std::memory_order_seq_cst);
        halted_transitions_.fetch_add(1, std::memory_order_relaxed);
        // The halted store above must be visible before this credit check:
        // either the producer sees halted and wakes us, or we see its credit.
        if (credits_.load(std::memory_order_seq_cst) == 0) {
            cv_.wait(lk, [&] {
                return torn_down_.load(std::memory_order_seq_cst) ||
                       credits_.load(std::memory_order_seq_cst) > 0 ||
                       !halted_.load(std::memory_order_seq_cst);
            });
        }
        // If no wake cleared the flag we un-halt ourselves before retrying.
        halted_.store(false, std::memory_order_seq_cst);
        if (torn_down_.load(std::memory_order_seq_cst)) return ErrorCode::VmTerminated;
    }
}

bool ControlPage::produce() {
    produces_.fetch_add(1, std::memory_order_relaxed);
    credits_.fetch_add(1, std::memory_order_seq_cst);
    if (halted_.load(std::memory_order_seq_cst)) {
        std::lock_guard lk(mutex_);
        if (halted_.load(std::memory_order_seq_cst)) {
            halted_.store(false, std::memory_order_seq_cst);
            wakes_.fetch_add(1, std::memory_order_relaxed);
            cv_.notify_all();
            return true;
        }
    }
    return false;
}

void ControlPage::shutdown() {
    std::lock_guard lk(mutex_);
    torn_down_.store(true, std::memory_order_seq_cst);
    cv_.notify_all();
}

ControlPage::Stats ControlPage::stats() const {
    Stats s;
    s.produces = produces_.load(std::memory_order_relaxed);
    s.consumes = consumes_.load(std::memory_order_relaxed);
    s.wakes = wakes_.load(std::memory_order_relaxed);
    s.halted_transitions = halted_transitions_.load(std::memory_order_relaxed);
    return s;
}

}  // namespace mksv::ikc
