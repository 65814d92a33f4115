#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <semaphore>
#include <sstream>
#include <thread>

#include "mksv/replay/analytics.hpp"
#include "mksv/replay/driver.hpp"
#include "mksv/replay/trace.hpp"
#include "mksv/util/stats.hpp"

using namespace mksv;
using namespace mksv::replay;

namespace {

std::vector<TraceRecord> parse(const std::string& csv) {
    std::istringstream in(csv);
    auto result = load_trace(in);
    REQUIRE(result.ok());
    return result.take();
}

// O(n^2) reference for the same-tenant in-flight count at each arrival.
std::vector<uint32_t> brute_force_inflight(std::span<const TraceRecord> records,
                                           double default_st) {
    std::vector<uint32_t> counts(records.size(), 0);
    for (size_t i = 0; i < records.size(); ++i) {
        double t = records[i].arrival_ms;
        for (size_t j = 0; j < records.size(); ++j) {
            if (j == i) continue;
            if (records[j].tenant_id != records[i].tenant_id) continue;
            double st = records[j].service_time_ms.value_or(default_st);
            if (records[j].arrival_ms <= t && t < records[j].arrival_ms + st) {
                counts[i] += 1;
            }
        }
    }
    return counts;
}

class NoopTarget : public InvocationTarget {
  public:
    Result<void> invoke(const TraceRecord&) override { return {}; }
};

/// Backend with a hard capacity: `slots` concurrent requests, each holding
/// a slot for service_ms. Capacity = slots * 1000 / service_ms RPS.
class CapacityStub : public InvocationTarget {
  public:
    CapacityStub(int slots, double service_ms)
        : semaphore_(slots), service_ms_(service_ms) {}

    Result<void> invoke(const TraceRecord&) override {
        semaphore_.acquire();
        std::this_thread::sleep_for(
            std::chrono::duration<double, std::milli>(service_ms_));
        semaphore_.release();
        return {};
    }

  private:
    std::counting_semaphore<1024> semaphore_;
    double service_ms_;
};

ReplayReport run_replay(std::span<const TraceRecord> records, const ReplayConfig& config,
                        InvocationTarget& target) {
    return mksv::replay::replay(records, config, target);
}

std::vector<TraceRecord> uniform_trace(size_t n, double span_ms, const std::string& tenant) {
    std::vector<TraceRecord> records(n);
    for (size_t i = 0; i < n; ++i) {
        records[i].arrival_ms = span_ms * static_cast<double>(i) / static_cast<double>(n);
        records[i].tenant_id = tenant;
        records[i].function_id = "echo";
    }
    return records;
}

}  // namespace

TEST_CASE("load_trace parses, validates and sorts") {
    auto records = parse("arrival_ms,tenant_id,function_id\n"
                         "5,tb,f2\n"
                         "1,ta,f1\n"
                         "3,tc,f3\n");
    REQUIRE(records.size() == 3);
    CHECK(records[0].tenant_id == "ta");
    CHECK(records[1].tenant_id == "tc");
    CHECK(records[2].tenant_id == "tb");
    CHECK_FALSE(records[0].service_time_ms.has_value());

    auto with_service = parse("arrival_ms,tenant_id,function_id,service_time_ms\n"
                              "1,ta,f1,250\n");
    CHECK(with_service[0].service_time_ms == 250.0);

    std::istringstream empty_tenant("arrival_ms,tenant_id,function_id\n2,,f\n");
    auto bad = load_trace(empty_tenant);
    REQUIRE_FALSE(bad.ok());
    CHECK(bad.error().line == 2);

    std::istringstream empty("");
    auto none = load_trace(empty);
    REQUIRE_FALSE(none.ok());

    std::istringstream garbage("arrival_ms,tenant_id,function_id\nxx,t,f\n");
    auto unparsable = load_trace(garbage);
    REQUIRE_FALSE(unparsable.ok());
    CHECK(unparsable.error().line == 2);
}

TEST_CASE("decimation keeps the 1st, 3rd, 5th ... records") {
    auto records = uniform_trace(10, 100, "t");
    for (size_t i = 0; i < records.size(); ++i) {
        records[i].function_id = "f" + std::to_string(i);
    }
    auto kept = decimate(records, 2);
    REQUIRE(kept.size() == 5);
    CHECK(kept[0].function_id == "f0");
    CHECK(kept[1].function_id == "f2");
    CHECK(kept[4].function_id == "f8");
    // deterministic: same inputs, same subset
    auto again = decimate(records, 2);
    for (size_t i = 0; i < kept.size(); ++i) {
        CHECK(kept[i].function_id == again[i].function_id);
    }
}

TEST_CASE("inflight cdf base cases") {
    auto lone = parse("arrival_ms,tenant_id,function_id,service_time_ms\n0,t,f,100\n");
    auto cdf = inflight_cdf(lone, 100);
    CHECK(cdf.p_zero == 1.0);

    // second arrives inside the first's service window
    auto overlap = parse("arrival_ms,tenant_id,function_id,service_time_ms\n"
                         "0,t,f,100\n"
                         "50,t,f,100\n");
    auto cdf2 = inflight_cdf(overlap, 100);
    CHECK(cdf2.p_zero == 0.5);
    CHECK(cdf2.counts == std::vector<uint32_t>{0, 1});

    // cross-tenant overlap does not count
    auto cross = parse("arrival_ms,tenant_id,function_id,service_time_ms\n"
                       "0,a,f,100\n"
                       "50,b,f,100\n");
    CHECK(inflight_cdf(cross, 100).p_zero == 1.0);
}

TEST_CASE("inflight counts equal the brute-force oracle on random traces") {
    std::mt19937_64 rng(41);
    for (int iter = 0; iter < 30; ++iter) {
        size_t n = 10 + rng() % 600;
        size_t tenants = 1 + rng() % 8;
        std::vector<TraceRecord> records(n);
        for (size_t i = 0; i < n; ++i) {
            records[i].arrival_ms = static_cast<double>(rng() % 5000);
            records[i].tenant_id = "t" + std::to_string(rng() % tenants);
            records[i].function_id = "f";
            if ((rng() & 1) != 0) {
                records[i].service_time_ms = static_cast<double>(rng() % 300);
            }
        }
        std::stable_sort(records.begin(), records.end(),
                         [](const TraceRecord& a, const TraceRecord& b) {
                             return a.arrival_ms < b.arrival_ms;
                         });
        auto fast = inflight_counts(records, 100);
        auto slow = brute_force_inflight(records, 100);
        REQUIRE(fast == slow);
    }
}

TEST_CASE("nearest-rank percentiles match a sort-based oracle") {
    std::mt19937_64 rng(7);
    for (int iter = 0; iter < 50; ++iter) {
        size_t n = 1 + rng() % 500;
        std::vector<double> samples(n);
        for (auto& s : samples) s = static_cast<double>(rng() % 100000) / 10.0;
        for (double p : {50.0, 95.0, 99.0}) {
            std::vector<double> sorted = samples;
            std::sort(sorted.begin(), sorted.end());
            size_t rank = static_cast<size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
            double expected = sorted[std::max<size_t>(rank, 1) - 1];
            CHECK(util::percentile_nearest_rank(samples, p) == expected);
        }
    }
    std::vector<double> one = {42.0};
    CHECK(util::percentile_nearest_rank(one, 50) == 42.0);
    CHECK(util::percentile_nearest_rank(one, 99) == 42.0);
}

TEST_CASE("project_servers reproduces the published arithmetic exactly") {
    CHECK(project_servers(4310, 862).value() == 5);
    CHECK(project_servers(4310, 8.62).value() == 500);
    CHECK(project_servers(4310, 43.1).value() == 100);
    CHECK(project_servers(4310, 4310).value() == 1);
    CHECK(project_servers(4310, 10000).value() == 1);
    CHECK_FALSE(project_servers(4310, 0).ok());
}

TEST_CASE("project_servers is monotone in both arguments") {
    std::mt19937_64 rng(13);
    for (int iter = 0; iter < 2000; ++iter) {
        double trace = 1 + static_cast<double>(rng() % 100000) / 7.0;
        double node = 1 + static_cast<double>(rng() % 10000) / 3.0;
        double node_bigger = node * (1.0 + static_cast<double>(rng() % 100) / 50.0);
        double trace_bigger = trace * (1.0 + static_cast<double>(rng() % 100) / 50.0);
        CHECK(project_servers(trace, node_bigger).value() <=
              project_servers(trace, node).value());
        CHECK(project_servers(trace_bigger, node).value() >=
              project_servers(trace, node).value());
    }
}

TEST_CASE("replay smoke: everything issued, nothing lost") {
    auto records = uniform_trace(10, 100, "t");
    ReplayConfig config;
    config.max_inflight = 8;
    NoopTarget target;
    auto report = run_replay(records, config, target);
    CHECK(report.issued == 10);
    CHECK(report.samples.size() == 10);
    CHECK(report.errors == 0);
    CHECK(report.saturation_events == 0);
    CHECK_FALSE(report.slo_tripped);
    CHECK_FALSE(report.budget_tripped);
}

TEST_CASE("replay decimation issues every k-th record") {
    auto records = uniform_trace(1000, 200, "t");
    ReplayConfig config;
    config.downsample_factor = 10;
    NoopTarget target;
    auto report = run_replay(records, config, target);
    CHECK(report.issued == 100);
}

TEST_CASE("open-loop issuance skew stays tight on an idle host") {
    auto records = uniform_trace(200, 400, "t");
    ReplayConfig config;
    NoopTarget target;
    auto report = run_replay(records, config, target);
    CHECK(report.issue_skew_p99_ms < 2.0);
}

TEST_CASE("saturation events are counted when the in-flight bound binds") {
    auto records = uniform_trace(20, 40, "t");  // 500 rps
    ReplayConfig config;
    config.max_inflight = 1;
    CapacityStub slow(1, 30);  // each call takes 30 ms
    auto report = run_replay(records, config, slow);
    CHECK(report.issued == 20);
    CHECK(report.saturation_events > 0);
}

TEST_CASE("duration cap skips the tail") {
    auto records = uniform_trace(100, 1000, "t");
    ReplayConfig config;
    config.duration_cap_ms = 99;  // keep roughly the first tenth
    NoopTarget target;
    auto report = run_replay(records, config, target);
    CHECK(report.issued == 10);
    CHECK(report.skipped_by_cap == 90);
}

TEST_CASE("tiny memory budget trips at the starting factor") {
    auto records = uniform_trace(50, 100, "t");
    ReplayConfig config;
    config.memory_budget_bytes = 0;  // any growth trips
    NoopTarget target;
    // memory proxy sampling needs some growth; allocate inside the target
    class Hog : public InvocationTarget {
      public:
        Result<void> invoke(const TraceRecord&) override {
            blocks_.emplace_back(1 << 20, std::byte{1});
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
            return {};
        }
        std::vector<std::vector<std::byte>> blocks_;
    } hog;
    auto peak = find_peak_rps(records, config, hog, 4);
    CHECK(peak.tripped_at_start);
    CHECK(peak.factor == 4);
    (void)target;
}

TEST_CASE("no constraint means the search returns the full trace") {
    auto records = uniform_trace(60, 120, "t");
    ReplayConfig config;  // defaults: generous SLO, unlimited memory
    NoopTarget target;
    auto peak = find_peak_rps(records, config, target, 8);
    CHECK(peak.factor == 1);
    CHECK_FALSE(peak.tripped_at_start);
    CHECK(peak.report.issued == 60);
}

TEST_CASE("peak search converges onto a stub capacity") {
    // 1500 records over 1.5 s = 1000 rps at factor 1; stub capacity 100 rps
    auto records = uniform_trace(1500, 1500, "t");
    ReplayConfig config;
    config.slo_ms = 120;
    config.slo_window_ms = 300;
    config.slo_trip_windows = 2;
    config.max_inflight = 256;
    CapacityStub stub(2, 20);  // 100 rps
    auto peak = find_peak_rps(records, config, stub, 64);
    CHECK_FALSE(peak.tripped_at_start);
    double offered_at_peak = 1000.0 / peak.factor;
    CHECK(offered_at_peak <= 100.0 * 1.25);
    if (peak.factor > 1) {
        double offered_one_step_harder = 1000.0 / (peak.factor - 1);
        CHECK(offered_one_step_harder >= 100.0 * 0.8);
    }
    CHECK(peak.report.saturation_events == 0);
}
