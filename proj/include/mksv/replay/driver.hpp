#pragma once

#include <atomic>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mksv/ikc/error.hpp"
#include "mksv/replay/trace.hpp"

namespace mksv::replay {

struct ReplayConfig {
    uint32_t downsample_factor = 1;
    size_t max_inflight = 256;  // sized so the client is never the bottleneck
    double slo_ms = 1000;
    double slo_window_ms = 5000;
    int slo_trip_windows = 2;  // consecutive over-SLO windows before tripping
    uint64_t memory_budget_bytes = std::numeric_limits<uint64_t>::max();
    double duration_cap_ms = 0;  // 0 = no cap
    double default_service_time_ms = 100;
    uint64_t seed = 0;
};

struct RequestSample {
    uint64_t request_id = 0;
    std::string tenant;
    double scheduled_ms = 0;  // offset into the replay window
    double issued_ms = 0;
    double latency_ms = 0;  // completion minus scheduled arrival
    uint16_t status = 0;    // 0 ok, else ErrorCode
};

struct ReplayReport {
    std::vector<RequestSample> samples;
    uint64_t issued = 0;
    uint64_t errors = 0;
    uint64_t skipped_by_cap = 0;
    uint64_t saturation_events = 0;
    double p50_ms = 0;
    double p99_ms = 0;
    double achieved_rps = 0;
    double duration_ms = 0;
    double issue_skew_p99_ms = 0;
    bool slo_tripped = false;
    bool budget_tripped = false;
    uint64_t peak_mem_delta_bytes = 0;
    std::vector<std::pair<double, uint32_t>> inflight_series;  // (t_ms, in flight)
    std::vector<std::pair<double, uint64_t>> mem_series;       // (t_ms, rss delta)

    std::string to_json() const;
    std::string samples_csv() const;  // request_id,tenant,issue_ts,latency_ms,status
};

/// Where replayed invocations land (the control plane, or a stub in tests).
class InvocationTarget {
  public:
    virtual ~InvocationTarget() = default;
    virtual Result<void> invoke(const TraceRecord& record) = 0;
};

/// Open-loop replay: every kept record is issued at its scheduled offset,
/// never delayed by completions except at the in-flight bound (counted as a
/// saturation event). Memory proxy and in-flight depth are sampled every
/// 100 ms.
ReplayReport replay(std::span<const TraceRecord> records, const ReplayConfig& config,
                    InvocationTarget& target);

struct PeakSearchResult {
    uint32_t factor = 1;
    double peak_rps = 0;
    ReplayReport report;        // the accepted (last passing) run
    bool tripped_at_start = false;  // even the starting factor failed
};

/// Geometric descent over the downsample factor (halving) until the SLO or
/// the memory budget trips, then integer bisection between the last passing
/// and first failing factors, to a resolution of one step. Returns the last
/// passing run; when nothing trips, that is the full trace (factor 1).
PeakSearchResult find_peak_rps(const std::vector<TraceRecord>& records, ReplayConfig config,
                               InvocationTarget& target, uint32_t start_factor);

}  // namespace mksv::replay
