#include "mksv/replay/analytics.hpp"

#include <cmath>
#include <queue>
#include <sstream>

#include "mksv/ikc/error.hpp"

namespace mksv::replay {

std::vector<uint32_t> inflight_counts(std::span<const TraceRecord> records,
                                      double default_service_time_ms) {
    // Group record indices per tenant, preserving sorted arrival order.
    std::map<std::string_view, std::vector<size_t>> by_tenant;
    for (size_t i = 0; i < records.size(); ++i) {
        by_tenant[records[i].tenant_id].push_back(i);
    }

    std::vector<uint32_t> counts(records.size(), 0);
    for (auto& [tenant, indices] : by_tenant) {
        // min-heap of end times for requests that have arrived
        std::priority_queue<double, std::vector<double>, std::greater<>> ends;
        size_t i = 0;
        while (i < indices.size()) {
            double t = records[indices[i]].arrival_ms;
            // the group of simultaneous arrivals [i, j)
            size_t j = i;
            while (j < indices.size() && records[indices[j]].arrival_ms == t) ++j;

            while (!ends.empty() && ends.top() <= t) ends.pop();
            uint32_t base = static_cast<uint32_t>(ends.size());

            // simultaneous arrivals with positive service time count for
            // each other (arrival_j <= t < arrival_j + st_j holds)
            uint32_t live_in_group = 0;
            for (size_t k = i; k < j; ++k) {
                double st = records[indices[k]].service_time_ms.value_or(
                    default_service_time_ms);
                if (st > 0) ++live_in_group;
            }
            for (size_t k = i; k < j; ++k) {
                double st = records[indices[k]].service_time_ms.value_or(
                    default_service_time_ms);
                uint32_t self = st > 0 ? 1 : 0;
                counts[indices[k]] = base + live_in_group - self;
            }
            for (size_t k = i; k < j; ++k) {
                double st = records[indices[k]].service_time_ms.value_or(
                    default_service_time_ms);
                if (st > 0) ends.push(t + st);
            }
            i = j;
        }
    }
    return counts;
}

InflightCdf inflight_cdf(std::span<const TraceRecord> records,
                         double default_service_time_ms) {
    InflightCdf cdf;
    cdf.counts = inflight_counts(records, default_service_time_ms);
    if (cdf.counts.empty()) return cdf;

    std::map<uint32_t, uint64_t> histogram;
    for (uint32_t c : cdf.counts) histogram[c] += 1;
    uint64_t running = 0;
    for (const auto& [k, n] : histogram) {
        running += n;
        cdf.cumulative[k] = static_cast<double>(running) /
                            static_cast<double>(cdf.counts.size());
    }
    auto zero = histogram.find(0);
    cdf.p_zero = zero == histogram.end()
                     ? 0.0
                     : static_cast<double>(zero->second) /
                           static_cast<double>(cdf.counts.size());
    return cdf;
}

std::string InflightCdf::to_csv() const {
    std::ostringstream out;
    out << "k,p_le\n";
    for (const auto& [k, p] : cumulative) {
        out << k << "," << p << "\n";
    }
    return out.str();
}

Result<uint64_t> project_servers(double trace_peak_rps, double node_peak_rps) {
    if (!(node_peak_rps > 0) || !(trace_peak_rps >= 0)) {
        return ErrorCode::BackendFailure;
    }
    double quotient = trace_peak_rps / node_peak_rps;
    // Decimal inputs (862, 8.62, ...) should divide exactly; snap quotients
    // that are within rounding error of an integer before taking the ceiling.
    double snapped = std::nearbyint(quotient);
    if (std::fabs(quotient - snapped) <= 1e-9 * std::max(1.0, std::fabs(quotient))) {
        quotient = snapped;
    }
    return static_cast<uint64_t>(std::ceil(quotient));
}

}  // namespace mksv::replay
