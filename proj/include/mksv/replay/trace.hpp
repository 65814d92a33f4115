#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mksv/util/result.hpp"

namespace mksv::replay {

struct TraceRecord {
    double arrival_ms = 0;  // relative to trace start
    std::string tenant_id;
    std::string function_id;
    std::optional<double> service_time_ms;
};

struct TraceError {
    size_t line = 0;  // 1-based; 0 means file-level
    std::string message;
};

template <typename T>
using TraceResult = util::Result<T, TraceError>;

/// Parses the trace CSV: header `arrival_ms,tenant_id,function_id` with an
/// optional trailing `service_time_ms` column. Records come back sorted by
/// arrival_ms (stable on ties); malformed rows fail with their line number.
TraceResult<std::vector<TraceRecord>> load_trace(std::istream& in);
TraceResult<std::vector<TraceRecord>> load_trace_file(const std::string& path);

/// Keeps every k-th record starting with the first (indices 0, k, 2k, ...).
std::vector<TraceRecord> decimate(const std::vector<TraceRecord>& records, uint32_t factor);

}  // namespace mksv::replay
