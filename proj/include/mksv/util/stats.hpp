#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mksv::util {

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample,
/// 1-indexed. p50 of a single sample is the sample itself.
double percentile_nearest_rank(std::span<const double> samples, double p);

struct LatencySummary {
    double p50 = 0;
    double p95 = 0;
    double p99 = 0;
    double min = 0;
    double max = 0;
    double mean = 0;
    size_t count = 0;
};

LatencySummary summarize(std::span<const double> samples);

/// Resident-set size of this process in bytes (from /proc/self/statm).
uint64_t resident_set_bytes();

}  // namespace mksv::util
