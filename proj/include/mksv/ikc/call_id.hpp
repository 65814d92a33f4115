#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

namespace mksv::ikc {

/// Kernel-call identifiers. Codes are grouped by category so locality is a
/// pure function of the code range: exactly 0x70-0x73 execute remotely.
enum class CallId : uint16_t {
    // process & thread management
    kGetpid = 0x00,
    kGettid = 0x01,
    kExit = 0x02,
    kExitThread = 0x03,
    kJoinThread = 0x04,
    kCreateThread = 0x05,
    // scheduling & synchronization
    kYield = 0x10,
    kSleep = 0x11,
    kMutexLock = 0x12,
    kMutexUnlock = 0x13,
    kCondWait = 0x14,
    kCondSignal = 0x15,
    kResume = 0x16,
    // memory management
    kMmap = 0x20,
    kMunmap = 0x21,
    kMctrl = 0x22,
    kMcopy = 0x23,
    // capability & process control
    kCapctl = 0x30,
    kTerminate = 0x31,
    // thread-local storage
    kSetThreadDataArea = 0x40,
    kGetThreadDataArea = 0x41,
    // time & debug
    kGettime = 0x50,
    kDebug = 0x51,
    // device I/O management
    kMmioAlloc = 0x60,
    kMmioFree = 0x61,
    kMmioInfo = 0x62,
    kPmioAlloc = 0x63,
    kPmioFree = 0x64,
    kPmioRead = 0x65,
    kPmioWrite = 0x66,
    // inter-kernel communication
    kSend = 0x70,
    kRecv = 0x71,
    kPush = 0x72,
    kPull = 0x73,
};

bool call_id_known(uint16_t code);

constexpr bool is_remote(CallId id) {
    auto code = static_cast<uint16_t>(id);
    return code >= 0x70 && code <= 0x73;
}

const char* call_name(CallId id);
std::optional<CallId> call_from_name(std::string_view name);

/// Every defined call id, in code order. Used by dispatch tables and tests.
std::span<const CallId> all_call_ids();

}  // namespace mksv::ikc
