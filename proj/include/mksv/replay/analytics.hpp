#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mksv/ikc/error.hpp"
#include "mksv/replay/trace.hpp"

namespace mksv::replay {

/// Empirical distribution of the same-tenant in-flight count observed at
/// each arrival. A record j is in flight at time t when
/// arrival_j <= t < arrival_j + service_time_j; the arriving record itself
/// is excluded from its own count.
struct InflightCdf {
    std::vector<uint32_t> counts;            // per record, in sorted trace order
    std::map<uint32_t, double> cumulative;   // k -> P(count <= k)
    double p_zero = 0;                       // P(count == 0)

    std::string to_csv() const;  // "k,p_le\n" rows
};

/// Per-arrival same-tenant in-flight counts. Records must be sorted by
/// arrival_ms; records without a service time use the supplied default.
/// Runs in O(n log n) via a per-tenant sweep.
std::vector<uint32_t> inflight_counts(std::span<const TraceRecord> records,
                                      double default_service_time_ms);

InflightCdf inflight_cdf(std::span<const TraceRecord> records, double default_service_time_ms);

/// Servers needed for a trace at `trace_peak_rps` given one node sustains
/// `node_peak_rps`, assuming perfect load balancing: the ceiling of the
/// ratio, with a relative-epsilon snap so decimal inputs divide exactly.
Result<uint64_t> project_servers(double trace_peak_rps, double node_peak_rps);

}  // namespace mksv::replay
