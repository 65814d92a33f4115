#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <map>
#include <random>
#include <thread>

#include "mksv/ikc/marshal.hpp"
#include "mksv/ukernel/posix_shim.hpp"
#include "mksv/ukernel/programs.hpp"
#include "mksv/ukernel/user_vm.hpp"

using namespace mksv;
using namespace mksv::uk;
using ikc::CallId;
using ikc::FrameKind;
using ikc::IkcFrame;

namespace {

std::vector<std::byte> to_bytes(std::string_view s) {
    std::vector<std::byte> out(s.size());
    std::memcpy(out.data(), s.data(), s.size());
    return out;
}

std::string to_string(std::span<const std::byte> bytes) {
    return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

ProgramRegistry registry_with(const std::string& name, ProgramMain main) {
    ProgramRegistry r;
    r.add(name, std::move(main));
    return r;
}

Manifest manifest_for(const std::string& entry, StdioMode stdio = StdioMode::Stream) {
    Manifest m;
    m.name = entry;
    m.entry = entry;
    m.stdio = stdio;
    return m;
}

UvmConfig small_config() {
    UvmConfig config;
    config.context.image_bytes = 8ull << 20;
    config.context.record_kcall_trace = true;
    return config;
}

/// Minimal host-side pump standing in for a tenant service in unit tests:
/// echoes send payloads back as messages and accepts write/sock_send ops.
class TestServicePump {
  public:
    explicit TestServicePump(std::shared_ptr<ikc::IkcChannel> channel)
        : channel_(std::move(channel)) {
        thread_ = std::thread([this] { run(); });
    }
    ~TestServicePump() {
        channel_->shutdown();
        if (thread_.joinable()) thread_.join();
    }

    size_t writes_accepted() const { return writes_accepted_.load(); }
    std::vector<std::byte> written() {
        std::lock_guard lk(mutex_);
        return written_;
    }

  private:
    void run() {
        for (;;) {
            auto frame = channel_->host_recv();
            if (!frame.ok()) return;
            handle(frame.value());
        }
    }

    void respond(const IkcFrame& req, uint16_t status, std::vector<std::byte> payload) {
        IkcFrame resp;
        resp.kind = FrameKind::CallResponse;
        resp.uvm_id = req.uvm_id;
        resp.thread_id = req.thread_id;
        resp.call_id = req.call_id;
        resp.status = status;
        resp.seq = req.seq;
        resp.payload = std::move(payload);
        channel_->host_send(resp);
    }

    void handle(const IkcFrame& frame) {
        if (frame.kind == FrameKind::BulkReady) {
            auto info = ikc::decode_bulk_ready(frame.payload);
            if (!info.ok()) return;
            auto data = channel_->guest_to_host_bulk().pull(frame.seq, info.value().total_len,
                                                            std::chrono::milliseconds(5000));
            if (data.ok()) {
                std::lock_guard lk(mutex_);
                auto& bytes = data.value();
                written_.insert(written_.end(), bytes.begin(), bytes.end());
            }
            return;
        }
        if (frame.kind != FrameKind::CallRequest || frame.call_id != CallId::kSend) return;

        auto op = ikc::unmarshal_op(frame.payload);
        if (!op.ok()) {
            // raw message: respond OK and echo it back to the sender thread
            respond(frame, ikc::kStatusOk, {});
            IkcFrame echo;
            echo.kind = FrameKind::Command;
            echo.uvm_id = frame.uvm_id;
            echo.thread_id = frame.thread_id;
            echo.call_id = CallId::kRecv;
            echo.seq = frame.seq;
            echo.payload = frame.payload;
            channel_->host_send(echo);
            return;
        }
        switch (op.value().tag) {
            case ikc::OpTag::Write:
            case ikc::OpTag::SockSend: {
                writes_accepted_.fetch_add(1);
                std::vector<std::byte> payload;
                ikc::append_u32(payload, op.value().count);
                respond(frame, ikc::kStatusOk, std::move(payload));
                if (!op.value().bulk) {
                    std::lock_guard lk(mutex_);
                    written_.insert(written_.end(), op.value().data.begin(),
                                    op.value().data.end());
                }
                // bulk data arrives as a BulkReady frame handled above
                return;
            }
            default:
                respond(frame, static_cast<uint16_t>(ErrorCode::BackendFailure), {});
                return;
        }
    }

    std::shared_ptr<ikc::IkcChannel> channel_;
    std::thread thread_;
    std::mutex mutex_;
    std::vector<std::byte> written_;
    std::atomic<size_t> writes_accepted_{0};
};

}  // namespace

TEST_CASE("initial thread ids and pv clock") {
    std::atomic<uint64_t> seen_tid{99};
    std::atomic<uint64_t> seen_pid{0};
    auto registry = registry_with("probe", [&](GuestApi& api, PosixIo&, const Manifest&) {
        seen_tid = api.gettid();
        seen_pid = api.getpid();
        auto t1 = api.gettime_ns();
        auto t2 = api.gettime_ns();
        if (!t1.ok() || !t2.ok() || t2.value() < t1.value()) return 1;
        return 0;
    });
    auto vm = UserVm::boot(manifest_for("probe"), BootMode::Standalone, small_config(), registry);
    REQUIRE(vm.ok());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    CHECK(vm.value()->exit_status() == 0);
    CHECK(seen_tid.load() == 0);
    CHECK(seen_pid.load() == vm.value()->id());
}

TEST_CASE("create_thread and join return the child's exit value") {
    auto registry = registry_with("spawner", [](GuestApi& api, PosixIo&, const Manifest&) {
        auto child = api.create_thread([](GuestApi&) { return 7; });
        if (!child.ok()) return 1;
        auto joined = api.join_thread(child.value());
        if (!joined.ok()) return 2;
        if (joined.value() != 7) return 3;
        // join of an already-exited thread returns immediately
        auto again = api.join_thread(child.value());
        if (!again.ok() || again.value() != 7) return 4;
        return 0;
    });
    auto vm = UserVm::boot(manifest_for("spawner"), BootMode::Standalone, small_config(),
                           registry);
    REQUIRE(vm.ok());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    CHECK(vm.value()->exit_status() == 0);
}

TEST_CASE("mutex wakes waiters in FIFO order") {
    std::vector<int> order;
    std::mutex order_mutex;
    auto registry = registry_with("fifo", [&](GuestApi& api, PosixIo&, const Manifest&) {
        constexpr uint64_t kLock = 42;
        api.mutex_lock(kLock);
        std::vector<Tid> children;
        for (int i = 0; i < 4; ++i) {
            auto child = api.create_thread([&, i](GuestApi& capi) {
                capi.mutex_lock(kLock);
                {
                    std::lock_guard lk(order_mutex);
                    order.push_back(i);
                }
                capi.mutex_unlock(kLock);
                return 0;
            });
            if (!child.ok()) return 1;
            children.push_back(child.value());
            // let the child run up to the lock so the wait queue is ordered
            api.yield();
        }
        api.mutex_unlock(kLock);
        for (Tid child : children) api.join_thread(child);
        return 0;
    });
    auto vm = UserVm::boot(manifest_for("fifo"), BootMode::Standalone, small_config(), registry);
    REQUIRE(vm.ok());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    CHECK(vm.value()->exit_status() == 0);
    CHECK(order == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("condition variables hand off through the mutex") {
    auto registry = registry_with("cond", [](GuestApi& api, PosixIo&, const Manifest&) {
        constexpr uint64_t kLock = 1, kCond = 2;
        static int stage;  // guarded by the guest mutex
        stage = 0;
        auto child = api.create_thread([](GuestApi& capi) {
            capi.mutex_lock(kLock);
            while (stage == 0) capi.cond_wait(kCond, kLock);
            int seen = stage;
            capi.mutex_unlock(kLock);
            return seen;
        });
        if (!child.ok()) return 1;
        api.yield();  // child reaches cond_wait
        api.mutex_lock(kLock);
        stage = 5;
        api.cond_signal(kCond);
        api.mutex_unlock(kLock);
        auto joined = api.join_thread(child.value());
        if (!joined.ok()) return 2;
        return joined.value() == 5 ? 0 : 3;
    });
    auto vm = UserVm::boot(manifest_for("cond"), BootMode::Standalone, small_config(), registry);
    REQUIRE(vm.ok());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    CHECK(vm.value()->exit_status() == 0);
}

TEST_CASE("sleep returns after the deadline and resume cuts it short") {
    auto registry = registry_with("sleeper", [](GuestApi& api, PosixIo&, const Manifest&) {
        auto t0 = api.gettime_ns().value();
        api.sleep_ns(5'000'000);  // 5 ms
        auto t1 = api.gettime_ns().value();
        if (t1 - t0 < 4'000'000) return 1;

        // suspended child resumed by the parent
        auto child = api.create_thread([](GuestApi& capi) {
            capi.sleep_ns(0);
            return 11;
        });
        api.yield();
        api.resume(child.value());
        auto joined = api.join_thread(child.value());
        return joined.ok() && joined.value() == 11 ? 0 : 2;
    });
    auto vm = UserVm::boot(manifest_for("sleeper"), BootMode::Standalone, small_config(),
                           registry);
    REQUIRE(vm.ok());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    CHECK(vm.value()->exit_status() == 0);
}

TEST_CASE("memory region lifecycle matches a reference interval model") {
    struct Model {
        std::map<uint64_t, uint64_t> regions;  // base -> len
        uint64_t image_size;

        uint64_t align(uint64_t v) const { return (v + 4095) / 4096 * 4096; }
        std::optional<uint64_t> mmap(uint64_t len) {
            if (len == 0) return std::nullopt;
            len = align(len);
            uint64_t base = kUserArenaBase;
            for (const auto& [rbase, rlen] : regions) {
                if (rbase >= base + len) break;
                base = std::max(base, rbase + rlen);
            }
            if (base + len > image_size) return std::nullopt;
            regions[base] = len;
            return base;
        }
        bool munmap(uint64_t base, uint64_t len) {
            auto it = regions.find(base);
            if (it == regions.end() || it->second != align(len)) return false;
            regions.erase(it);
            return true;
        }
        bool mapped(uint64_t base, uint64_t len) const {
            uint64_t pos = base, end = base + len;
            while (pos < end) {
                auto it = regions.upper_bound(pos);
                if (it == regions.begin()) return false;
                --it;
                if (pos < it->first || pos >= it->first + it->second) return false;
                pos = it->first + it->second;
            }
            return true;
        }
    };

    struct Op {
        int kind;  // 0 mmap, 1 munmap, 2 mcopy
        uint64_t a, b, c;
    };
    std::mt19937_64 rng(17);
    std::vector<Op> ops;
    {
        Model model{{}, 8ull << 20};
        std::vector<std::pair<uint64_t, uint64_t>> live;
        for (int i = 0; i < 300; ++i) {
            int kind = static_cast<int>(rng() % 3);
            if (kind == 0 || live.empty()) {
                uint64_t len = 1 + rng() % 20000;
                ops.push_back({0, len, 0, 0});
                auto base = model.mmap(len);
                if (base) live.push_back({*base, model.align(len)});
            } else if (kind == 1) {
                size_t pick = rng() % live.size();
                bool valid = (rng() % 4) != 0;
                auto [base, len] = live[pick];
                if (valid) {
                    ops.push_back({1, base, len, 0});
                    model.munmap(base, len);
                    live.erase(live.begin() + static_cast<ptrdiff_t>(pick));
                } else {
                    ops.push_back({1, base + 4096 * 100, len, 0});  // likely unmapped
                }
            } else {
                size_t pick = rng() % live.size();
                auto [base, len] = live[pick];
                uint64_t half = len / 2;
                if (half == 0) continue;
                ops.push_back({2, base, base + half, half});
            }
        }
    }

    // replay on the guest, recording per-op success
    std::vector<int> guest_results;
    std::mutex results_mutex;
    auto registry = registry_with("mem", [&](GuestApi& api, PosixIo&, const Manifest&) {
        for (const auto& op : ops) {
            bool ok = false;
            switch (op.kind) {
                case 0: ok = api.mmap(op.a).ok(); break;
                case 1: ok = api.munmap(op.a, op.b).ok(); break;
                case 2: ok = api.mcopy(op.b, op.a, op.c).ok(); break;
            }
            std::lock_guard lk(results_mutex);
            guest_results.push_back(ok ? 1 : 0);
        }
        return 0;
    });
    auto vm = UserVm::boot(manifest_for("mem"), BootMode::Standalone, small_config(), registry);
    REQUIRE(vm.ok());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(10000)));

    // replay on the reference model
    Model model{{}, 8ull << 20};
    std::vector<int> expected;
    for (const auto& op : ops) {
        switch (op.kind) {
            case 0: expected.push_back(model.mmap(op.a) ? 1 : 0); break;
            case 1: expected.push_back(model.munmap(op.a, op.b) ? 1 : 0); break;
            case 2: {
                bool ok = model.mapped(op.a, op.c) && model.mapped(op.b, op.c);
                expected.push_back(ok ? 1 : 0);
                break;
            }
        }
    }
    CHECK(guest_results == expected);
}

TEST_CASE("mcopy and bulk writes never touch bytes outside declared ranges") {
    auto registry = registry_with("canary", [](GuestApi& api, PosixIo&, const Manifest&) {
        auto a = api.mmap(4096);
        auto b = api.mmap(4096);
        if (!a.ok() || !b.ok()) return 1;
        auto image = api.image();
        for (uint64_t i = 0; i < 4096; ++i) {
            image[a.value() + i] = static_cast<std::byte>(i & 0xFF);
        }
        if (!api.mcopy(b.value(), a.value(), 4096).ok()) return 2;
        return 0;
    });
    auto vm = UserVm::boot(manifest_for("canary"), BootMode::Standalone, small_config(),
                           registry);
    REQUIRE(vm.ok());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    REQUIRE(vm.value()->exit_status() == 0);

    auto image = vm.value()->context().image();
    // regions were carved from the arena base; bytes just outside stay zero
    uint64_t a = kUserArenaBase, b = kUserArenaBase + 4096;
    CHECK(image[a - 1] == std::byte{0});
    CHECK(image[b + 4096] == std::byte{0});
    CHECK(image[a + 100] == static_cast<std::byte>(100));
    CHECK(image[b + 100] == static_cast<std::byte>(100));
}

TEST_CASE("local-only workload produces zero channel frames") {
    Manifest m = manifest_for("local-burst");
    m.argv = {"10000"};
    auto vm = UserVm::boot(m, BootMode::Standalone, small_config());
    REQUIRE(vm.ok());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(20000)));
    CHECK(vm.value()->exit_status() == 0);
    CHECK(vm.value()->channel()->frames_to_host() == 0);
    CHECK(vm.value()->channel()->frames_to_guest() == 0);
    auto trace = vm.value()->context().kcall_trace();
    CHECK(trace.size() >= 10000);
}

TEST_CASE("remote send gets a response and recv delivers the echo") {
    auto registry = registry_with("loopback", [](GuestApi& api, PosixIo&, const Manifest&) {
        auto payload = to_bytes("hello");
        if (!api.send(payload).ok()) return 1;
        auto back = api.recv();
        if (!back.ok()) return 2;
        return back.value() == payload ? 0 : 3;
    });
    auto vm = UserVm::boot(manifest_for("loopback"), BootMode::Attached, small_config(),
                           registry);
    REQUIRE(vm.ok());
    TestServicePump pump(vm.value()->channel());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    CHECK(vm.value()->exit_status() == 0);
}

TEST_CASE("interleaved sends from two guest threads match by thread and seq") {
    constexpr int kCalls = 50;
    auto registry = registry_with("pair", [](GuestApi& api, PosixIo&, const Manifest&) {
        auto worker = [](GuestApi& capi) {
            for (int i = 0; i < kCalls; ++i) {
                std::string msg = "t" + std::to_string(capi.tid()) + ":" + std::to_string(i);
                auto payload = to_bytes(msg);
                if (!capi.send(payload).ok()) return 1;
                auto back = capi.recv();
                if (!back.ok()) return 2;
                if (back.value() != payload) return 3;
            }
            return 0;
        };
        auto child = api.create_thread(worker);
        if (!child.ok()) return 1;
        int mine = worker(api);
        auto theirs = api.join_thread(child.value());
        if (mine != 0) return 10 + mine;
        if (!theirs.ok() || theirs.value() != 0) return 20;
        return 0;
    });
    auto vm = UserVm::boot(manifest_for("pair"), BootMode::Attached, small_config(), registry);
    REQUIRE(vm.ok());
    TestServicePump pump(vm.value()->channel());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(10000)));
    CHECK(vm.value()->exit_status() == 0);
}

TEST_CASE("recv blocks on the empty credit counter until a message lands") {
    std::atomic<bool> got{false};
    auto registry = registry_with("waiter", [&](GuestApi& api, PosixIo&, const Manifest&) {
        auto message = api.recv();
        if (!message.ok()) return 1;
        got = to_string(message.value()) == "wake";
        return 0;
    });
    auto vm = UserVm::boot(manifest_for("waiter"), BootMode::Standalone, small_config(),
                           registry);
    REQUIRE(vm.ok());
    auto& page = vm.value()->channel()->page();
    // the poll loop halts with zero credits while the guest waits in recv
    for (int i = 0; i < 1000 && !page.halted(); ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    CHECK(page.halted());
    vm.value()->feed_stdin(to_bytes("wake"));
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    CHECK(vm.value()->exit_status() == 0);
    CHECK(got.load());
}

TEST_CASE("push transfers 64 KiB as page segments intact") {
    constexpr size_t kTotal = 64 * 1024;
    auto registry = registry_with("pusher", [](GuestApi& api, PosixIo&, const Manifest&) {
        auto base = api.mmap(kTotal);
        if (!base.ok()) return 1;
        auto image = api.image();
        for (size_t i = 0; i < kTotal; ++i) {
            image[base.value() + i] = static_cast<std::byte>((i * 7) & 0xFF);
        }
        std::vector<ikc::BulkSegment> segments;
        for (size_t page = 0; page < kTotal / 4096; ++page) {
            segments.push_back({base.value() + page * 4096, 4096});
        }
        auto pushed = api.push(segments);
        if (!pushed.ok()) return 2;
        return pushed.value() == kTotal ? 0 : 3;
    });
    auto vm = UserVm::boot(manifest_for("pusher"), BootMode::Attached, small_config(), registry);
    REQUIRE(vm.ok());
    TestServicePump pump(vm.value()->channel());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    CHECK(vm.value()->exit_status() == 0);
    auto written = pump.written();
    REQUIRE(written.size() == kTotal);
    for (size_t i = 0; i < kTotal; ++i) {
        REQUIRE(written[i] == static_cast<std::byte>((i * 7) & 0xFF));
    }
}

TEST_CASE("strict page mode rejects a boundary-spanning push") {
    auto registry = registry_with("strict", [](GuestApi& api, PosixIo&, const Manifest&) {
        auto base = api.mmap(8192);
        if (!base.ok()) return 1;
        ikc::BulkSegment seg{base.value(), 4097};
        auto pushed = api.push(std::span(&seg, 1));
        if (pushed.ok()) return 2;
        return pushed.error() == ErrorCode::CrossesPageBoundary ? 0 : 3;
    });
    UvmConfig config = small_config();
    config.context.strict_page_mode = true;
    auto vm = UserVm::boot(manifest_for("strict"), BootMode::Standalone, config, registry);
    REQUIRE(vm.ok());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    CHECK(vm.value()->exit_status() == 0);
    // the rejected push sent nothing
    CHECK(vm.value()->channel()->frames_to_host() == 0);
}

TEST_CASE("boot produces the full ten-phase report") {
    auto vm = UserVm::boot(manifest_for("noop"), BootMode::Standalone, small_config());
    REQUIRE(vm.ok());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    const auto& report = vm.value()->report();
    REQUIRE(report.phases.size() == kBootPhaseNames.size());
    for (size_t i = 0; i < kBootPhaseNames.size(); ++i) {
        CHECK(report.phases[i].name == kBootPhaseNames[i]);
    }
    uint64_t sum = 0;
    for (const auto& phase : report.phases) sum += phase.micros;
    CHECK(report.total_micros == sum);
}

TEST_CASE("uvm ids are fresh across boots") {
    auto vm1 = UserVm::boot(manifest_for("noop"), BootMode::Standalone, small_config());
    auto vm2 = UserVm::boot(manifest_for("noop"), BootMode::Standalone, small_config());
    REQUIRE(vm1.ok());
    REQUIRE(vm2.ok());
    CHECK(vm1.value()->id() != vm2.value()->id());
    vm1.value()->wait(std::chrono::milliseconds(5000));
    vm2.value()->wait(std::chrono::milliseconds(5000));
}

TEST_CASE("boot rejects unknown programs and oversized initrd") {
    auto missing = UserVm::boot(manifest_for("no-such-program"), BootMode::Standalone,
                                small_config());
    REQUIRE_FALSE(missing.ok());
    CHECK(missing.error() == ErrorCode::BadFrame);

    Manifest m = manifest_for("noop");
    m.initrd.resize(kInitrdMaxBytes + 1);
    auto oversized = UserVm::boot(m, BootMode::Standalone, small_config());
    REQUIRE_FALSE(oversized.ok());
    CHECK(oversized.error() == ErrorCode::BadFrame);
}

TEST_CASE("standalone echo bridges stdin to stdout") {
    auto vm = UserVm::boot(manifest_for("echo"), BootMode::Standalone, small_config());
    REQUIRE(vm.ok());
    vm.value()->feed_stdin(to_bytes("ping"));
    vm.value()->close_stdin();
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    CHECK(vm.value()->exit_status() == 0);
    CHECK(to_string(vm.value()->take_stdout()) == "ping");
    CHECK(vm.value()->first_output_at().has_value());
}

TEST_CASE("exit_process tears down sibling threads") {
    auto registry = registry_with("exiter", [](GuestApi& api, PosixIo&, const Manifest&) {
        api.create_thread([](GuestApi& capi) {
            capi.sleep_ns(0);  // suspended forever unless torn down
            return 0;
        });
        api.yield();
        api.exit_process(9);
        return 0;  // unreachable
    });
    auto vm = UserVm::boot(manifest_for("exiter"), BootMode::Standalone, small_config(),
                           registry);
    REQUIRE(vm.ok());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    CHECK(vm.value()->exit_status() == 9);
}

TEST_CASE("shim emits one bulk push for a large write instead of many sends") {
    constexpr size_t kBig = 8192;
    auto registry = registry_with("bigwrite", [](GuestApi&, PosixIo& io, const Manifest&) {
        std::vector<std::byte> data(kBig, std::byte{0xAB});
        auto w = io.write(5, data);
        if (!w.ok()) return 1;
        return w.value() == kBig ? 0 : 2;
    });
    auto vm = UserVm::boot(manifest_for("bigwrite"), BootMode::Attached, small_config(),
                           registry);
    REQUIRE(vm.ok());
    TestServicePump pump(vm.value()->channel());
    REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
    CHECK(vm.value()->exit_status() == 0);

    auto trace = vm.value()->context().kcall_trace();
    int sends = 0, pushes = 0;
    for (CallId id : trace) {
        if (id == CallId::kSend) ++sends;
        if (id == CallId::kPush) ++pushes;
    }
    CHECK(pushes == 1);
    CHECK(sends == 1);  // the marshaled header, not 40+ inline chunks
    CHECK(pump.written().size() == kBig);
}

TEST_CASE("shim write sequences are deterministic per call shape") {
    auto run_once = [](size_t size) {
        auto registry = registry_with("det", [size](GuestApi&, PosixIo& io, const Manifest&) {
            std::vector<std::byte> data(size, std::byte{1});
            return io.write(5, data).ok() ? 0 : 1;
        });
        auto vm = UserVm::boot(manifest_for("det"), BootMode::Attached, small_config(),
                               registry);
        REQUIRE(vm.ok());
        TestServicePump pump(vm.value()->channel());
        REQUIRE(vm.value()->wait(std::chrono::milliseconds(5000)));
        return vm.value()->context().kcall_trace();
    };
    CHECK(run_once(64) == run_once(64));
    CHECK(run_once(10000) == run_once(10000));
    CHECK(run_once(64) != run_once(10000));
}
