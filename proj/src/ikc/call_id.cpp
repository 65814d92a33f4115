#include "mksv/ikc/call_id.hpp"

#include <array>

namespace mksv::ikc {

namespace {

struct CallInfo {
    CallId id;
    const char* name;
};

constexpr std::array<CallInfo, 34> kCallTable = {{
    {CallId::kGetpid, "getpid"},
    {CallId::kGettid, "gettid"},
    {CallId::kExit, "exit"},
    {CallId::kExitThread, "exit_thread"},
    {CallId::kJoinThread, "join_thread"},
    {CallId::kCreateThread, "create_thread"},
    {CallId::kYield, "yield"},
    {CallId::kSleep, "sleep"},
    {CallId::kMutexLock, "mutex_lock"},
    {CallId::kMutexUnlock, "mutex_unlock"},
    {CallId::kCondWait, "cond_wait"},
    {CallId::kCondSignal, "cond_signal"},
    {CallId::kResume, "resume"},
    {CallId::kMmap, "mmap"},
    {CallId::kMunmap, "munmap"},
    {CallId::kMctrl, "mctrl"},
    {CallId::kMcopy, "mcopy"},
    {CallId::kCapctl, "capctl"},
    {CallId::kTerminate, "terminate"},
    {CallId::kSetThreadDataArea, "set_thread_data_area"},
    {CallId::kGetThreadDataArea, "get_thread_data_area"},
    {CallId::kGettime, "gettime"},
    {CallId::kDebug, "debug"},
    {CallId::kMmioAlloc, "mmio_alloc"},
    {CallId::kMmioFree, "mmio_free"},
    {CallId::kMmioInfo, "mmio_info"},
    {CallId::kPmioAlloc, "pmio_alloc"},
    {CallId::kPmioFree, "pmio_free"},
    {CallId::kPmioRead, "pmio_read"},
    {CallId::kPmioWrite, "pmio_write"},
    {CallId::kSend, "send"},
    {CallId::kRecv, "recv"},
    {CallId::kPush, "push"},
    {CallId::kPull, "pull"},
}};

constexpr std::array<CallId, kCallTable.size()> make_id_list() {
    std::array<CallId, kCallTable.size()> ids{};
    for (size_t i = 0; i < kCallTable.size(); ++i) ids[i] = kCallTable[i].id;
    return ids;
}

constexpr auto kAllIds = make_id_list();

}  // namespace

bool call_id_known(uint16_t code) {
    for (CallId id : kAllIds) {
        if (static_cast<uint16_t>(id) == code) return true;
    }
    return false;
}

const char* call_name(CallId id) {
    for (const auto& info : kCallTable) {
        if (info.id == id) return info.name;
    }
    return "unknown";
}

std::optional<CallId> call_from_name(std::string_view name) {
    for (const auto& info : kCallTable) {
        if (name == info.name) return info.id;
    }
    return std::nullopt;
}

std::span<const CallId> all_call_ids() {
    return kAllIds;
}

}  // namespace mksv::ikc
