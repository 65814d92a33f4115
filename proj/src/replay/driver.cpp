#include "mksv/replay/driver.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mksv/util/stats.hpp"

namespace mksv::replay {

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

struct IssuedRequest {
    size_t index = 0;
    const TraceRecord* record = nullptr;
};

// Post-hoc SLO evaluation: tumbling windows over completion times; the SLO
// trips after `trip_windows` consecutive windows whose p99 exceeds it.
bool evaluate_slo(const std::vector<RequestSample>& samples, double slo_ms, double window_ms,
                  int trip_windows) {
    if (samples.empty() || trip_windows <= 0) return false;
    double horizon = 0;
    for (const auto& s : samples) {
        horizon = std::max(horizon, s.scheduled_ms + s.latency_ms);
    }
    int consecutive = 0;
    for (double begin = 0; begin < horizon; begin += window_ms) {
        std::vector<double> in_window;
        for (const auto& s : samples) {
            double done = s.scheduled_ms + s.latency_ms;
            if (done >= begin && done < begin + window_ms) in_window.push_back(s.latency_ms);
        }
        if (in_window.empty()) {
            consecutive = 0;
            continue;
        }
        double p99 = util::percentile_nearest_rank(in_window, 99);
        consecutive = p99 > slo_ms ? consecutive + 1 : 0;
        if (consecutive >= trip_windows) return true;
    }
    return false;
}

}  // namespace

ReplayReport replay(std::span<const TraceRecord> records, const ReplayConfig& config,
                    InvocationTarget& target) {
    ReplayReport report;
    std::vector<TraceRecord> kept =
        decimate(std::vector<TraceRecord>(records.begin(), records.end()),
                 std::max<uint32_t>(1, config.downsample_factor));
    if (kept.empty()) return report;

    double base_arrival = kept.front().arrival_ms;
    if (config.duration_cap_ms > 0) {
        size_t cut = kept.size();
        for (size_t i = 0; i < kept.size(); ++i) {
            if (kept[i].arrival_ms - base_arrival > config.duration_cap_ms) {
                cut = i;
                break;
            }
        }
        report.skipped_by_cap = kept.size() - cut;
        kept.resize(cut);
        if (kept.empty()) return report;
    }

    report.samples.resize(kept.size());

    std::mutex mutex;
    std::condition_variable queue_cv;     // wakes one worker per enqueue
    std::condition_variable capacity_cv;  // wakes the issuer at the in-flight bound
    std::deque<IssuedRequest> queue;
    bool done_issuing = false;
    std::atomic<uint32_t> inflight{0};
    std::atomic<uint64_t> errors{0};
    std::atomic<bool> stop_sampler{false};

    auto t0 = std::chrono::steady_clock::now();
    uint64_t rss_baseline = util::resident_set_bytes();

    size_t worker_count = std::max<size_t>(1, config.max_inflight);
    std::vector<std::thread> workers;
    workers.reserve(worker_count);
    for (size_t w = 0; w < worker_count; ++w) {
        workers.emplace_back([&] {
            for (;;) {
                IssuedRequest req;
                {
                    std::unique_lock lk(mutex);
                    cv.wait(lk, [&] { return done_issuing || !queue.empty(); });
                    if (queue.empty()) return;
                    req = queue.front();
                    queue.pop_front();
                }
                auto outcome = target.invoke(*req.record);
                double now_ms = ms_since(t0);
                auto& sample = report.samples[req.index];
                sample.latency_ms = now_ms - sample.scheduled_ms;
                sample.status = outcome.ok()
                                    ? 0
                                    : static_cast<uint16_t>(outcome.error());
                if (!outcome.ok()) errors.fetch_add(1, std::memory_order_relaxed);
                inflight.fetch_sub(1, std::memory_order_acq_rel);
                cv.notify_all();
            }
        });
    }

    std::thread sampler([&] {
        while (!stop_sampler.load(std::memory_order_acquire)) {
            double t = ms_since(t0);
            uint64_t rss = util::resident_set_bytes();
            uint64_t delta = rss > rss_baseline ? rss - rss_baseline : 0;
            {
                std::lock_guard lk(mutex);
                report.inflight_series.push_back({t, inflight.load()});
                report.mem_series.push_back({t, delta});
                report.peak_mem_delta_bytes = std::max(report.peak_mem_delta_bytes, delta);
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
    });

    for (size_t i = 0; i < kept.size(); ++i) {
        double offset_ms = kept[i].arrival_ms - base_arrival;
        auto scheduled = t0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                  std::chrono::duration<double, std::milli>(offset_ms));
        std::this_thread::sleep_until(scheduled);

        if (inflight.load(std::memory_order_acquire) >= config.max_inflight) {
            // open-loop violation: the client had to hold a request back
            report.saturation_events += 1;
            std::unique_lock lk(mutex);
            cv.wait(lk, [&] {
                return inflight.load(std::memory_order_acquire) < config.max_inflight;
            });
        }

        auto& sample = report.samples[i];
        sample.request_id = i;
        sample.tenant = kept[i].tenant_id;
        sample.scheduled_ms = offset_ms;
        sample.issued_ms = ms_since(t0);
        inflight.fetch_add(1, std::memory_order_acq_rel);
        {
            std::lock_guard lk(mutex);
            queue.push_back({i, &kept[i]});
        }
        cv.notify_one();
        report.issued += 1;
    }

    {
        std::lock_guard lk(mutex);
        done_issuing = true;
    }
    cv.notify_all();
    for (auto& worker : workers) worker.join();
    stop_sampler.store(true, std::memory_order_release);
    sampler.join();

    report.errors = errors.load();
    report.duration_ms = ms_since(t0);

    std::vector<double> latencies;
    std::vector<double> skews;
    latencies.reserve(report.samples.size());
    for (const auto& s : report.samples) {
        latencies.push_back(s.latency_ms);
        skews.push_back(s.issued_ms - s.scheduled_ms);
    }
    report.p50_ms = util::percentile_nearest_rank(latencies, 50);
    report.p99_ms = util::percentile_nearest_rank(latencies, 99);
    report.issue_skew_p99_ms = util::percentile_nearest_rank(skews, 99);

    double window_ms = report.samples.empty()
                           ? 0
                           : report.samples.back().issued_ms - report.samples.front().issued_ms;
    report.achieved_rps = window_ms > 0
                              ? static_cast<double>(report.issued) / (window_ms / 1000.0)
                              : static_cast<double>(report.issued);

    report.slo_tripped = evaluate_slo(report.samples, config.slo_ms, config.slo_window_ms,
                                      config.slo_trip_windows);
    report.budget_tripped = report.peak_mem_delta_bytes > config.memory_budget_bytes;
    return report;
}

PeakSearchResult find_peak_rps(const std::vector<TraceRecord>& records, ReplayConfig config,
                               InvocationTarget& target, uint32_t start_factor) {
    auto run = [&](uint32_t factor) {
        ReplayConfig c = config;
        c.downsample_factor = factor;
        return replay(records, c, target);
    };
    auto passes = [](const ReplayReport& r) { return !r.slo_tripped && !r.budget_tripped; };

    PeakSearchResult result;
    uint32_t factor = std::max<uint32_t>(1, start_factor);
    ReplayReport current = run(factor);
    if (!passes(current)) {
        result.factor = factor;
        result.peak_rps = current.achieved_rps;
        result.report = std::move(current);
        result.tripped_at_start = true;
        return result;
    }

    while (factor > 1) {
        uint32_t next = factor / 2;
        ReplayReport attempt = run(next);
        if (passes(attempt)) {
            factor = next;
            current = std::move(attempt);
            continue;
        }
        // bisect integers in (next, factor): next fails, factor passes
        uint32_t bad = next;
        uint32_t good = factor;
        while (good - bad > 1) {
            uint32_t mid = bad + (good - bad) / 2;
            ReplayReport probe = run(mid);
            if (passes(probe)) {
                good = mid;
                current = std::move(probe);
            } else {
                bad = mid;
            }
        }
        factor = good;
        break;
    }
    result.factor = factor;
    result.peak_rps = current.achieved_rps;
    result.report = std::move(current);
    return result;
}

std::string ReplayReport::to_json() const {
    nlohmann::json j;
    j["issued"] = issued;
    j["errors"] = errors;
    j["skipped_by_cap"] = skipped_by_cap;
    j["saturation_events"] = saturation_events;
    j["p50_ms"] = p50_ms;
    j["p99_ms"] = p99_ms;
    j["achieved_rps"] = achieved_rps;
    j["duration_ms"] = duration_ms;
    j["issue_skew_p99_ms"] = issue_skew_p99_ms;
    j["slo_tripped"] = slo_tripped;
    j["budget_tripped"] = budget_tripped;
    j["peak_mem_delta_bytes"] = peak_mem_delta_bytes;
    return j.dump();
}

std::string ReplayReport::samples_csv() const {
    std::ostringstream out;
    out << "request_id,tenant,issue_ts_ms,latency_ms,status\n";
    for (const auto& s : samples) {
        out << s.request_id << "," << s.tenant << "," << s.issued_ms << "," << s.latency_ms
            << "," << s.status << "\n";
    }
    return out.str();
}

}  // namespace mksv::replay
