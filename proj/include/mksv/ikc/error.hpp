#pragma once

#include <cstdint>

#include "mksv/util/result.hpp"

namespace mksv::ikc {

/// Status code carried in the 16-bit frame status field. 0 is success and
/// never names an error.
enum class ErrorCode : uint16_t {
    BadFrame = 1,
    PayloadTooLarge = 2,
    CrossesPageBoundary = 3,
    FilterDenied = 4,
    UnknownCall = 5,
    BackendFailure = 6,
    VmTerminated = 7,
    Timeout = 8,
};

inline constexpr uint16_t kStatusOk = 0;

const char* to_string(ErrorCode code);

}  // namespace mksv::ikc

namespace mksv {

using ikc::ErrorCode;

template <typename T>
using Result = util::Result<T, ikc::ErrorCode>;

}  // namespace mksv
