#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>
#include <thread>

#include <json.hpp>

#include "mksv/ctrl/control_plane.hpp"
#include "mksv/ctrl/daemon.hpp"
#include "mksv/util/hex.hpp"
#include "mksv/util/net.hpp"

using namespace mksv;
using namespace mksv::ctrl;

namespace {

PlaneConfig test_config(const std::string& tag) {
    PlaneConfig config;
    config.uvm_image_bytes = 8ull << 20;
    config.service_snapshot_bytes = 1ull << 20;
    config.namespace_pool_size = 8;
    config.service_pool_size = 4;
    config.pool_low_water = 2;
    config.keepalive_ms = 60'000;
    config.invoke_timeout_ms = 10'000;
    config.scratch_root = std::filesystem::temp_directory_path() /
                          ("mksv_ctrl_" + tag + "_" + std::to_string(::getpid()));
    return config;
}

std::vector<std::byte> to_bytes(std::string_view s) {
    std::vector<std::byte> out(s.size());
    std::memcpy(out.data(), s.data(), s.size());
    return out;
}

std::string to_string(std::span<const std::byte> bytes) {
    return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

InvocationRequest echo_request(const std::string& tenant, DeployMode mode,
                               const std::string& payload = "x") {
    InvocationRequest req;
    req.tenant_id = tenant;
    req.function = "echo";
    req.mode = mode;
    req.inline_payload = to_bytes(payload);
    return req;
}

}  // namespace

TEST_CASE("standalone invoke echoes the inline payload without a service") {
    ControlPlane plane(test_config("standalone"));
    auto result = plane.invoke(echo_request("t1", DeployMode::Standalone));
    REQUIRE(result.ok());
    CHECK(result.value().exit_status == 0);
    CHECK(to_string(result.value().payload) == "x");
    CHECK_FALSE(result.value().gateway_port.has_value());
    CHECK(result.value().work.service_constructed == false);
    auto stats = plane.stats();
    CHECK(stats.live_services == 0);
    CHECK(stats.services_created == 0);
    // ephemerality: no user VM survives the invocation
    CHECK(plane.live_uvms() == 0);
    CHECK(result.value().boot_report.phases.size() == 10);
}

TEST_CASE("shared invoke reuses the tenant service and skips all init work") {
    ControlPlane plane(test_config("shared"));
    auto first = plane.invoke(echo_request("tenant-a", DeployMode::Shared));
    REQUIRE(first.ok());
    CHECK(first.value().exit_status == 0);
    CHECK(to_string(first.value().payload) == "x");
    CHECK(first.value().work.service_constructed);
    CHECK(first.value().gateway_port.has_value());

    auto second = plane.invoke(echo_request("tenant-a", DeployMode::Shared));
    REQUIRE(second.ok());
    CHECK_FALSE(second.value().work.service_constructed);
    CHECK_FALSE(second.value().work.pool_refill_inline);
    CHECK_FALSE(second.value().work.namespace_initialized);
    // warm path skips construction entirely
    CHECK(second.value().service_acquire_us < first.value().service_acquire_us + 1);
    CHECK(plane.stats().services_created == 1);
    CHECK(plane.stats().live_services == 1);
    CHECK(plane.live_uvms() == 0);
}

TEST_CASE("one-to-one invokes create and destroy one service each") {
    ControlPlane plane(test_config("onetoone"));
    auto r1 = plane.invoke(echo_request("t", DeployMode::OneToOne));
    REQUIRE(r1.ok());
    CHECK(r1.value().exit_status == 0);
    auto s1 = plane.stats();
    CHECK(s1.services_created == 1);
    CHECK(s1.services_reaped == 1);
    CHECK(s1.live_services == 0);

    auto r2 = plane.invoke(echo_request("t", DeployMode::OneToOne));
    REQUIRE(r2.ok());
    auto s2 = plane.stats();
    CHECK(s2.services_created == 2);
    CHECK(s2.services_reaped == 2);
    CHECK(r2.value().work.service_constructed);
}

TEST_CASE("distinct tenants get distinct services and scratch roots") {
    ControlPlane plane(test_config("tenants"));
    std::vector<std::shared_ptr<svc::TenantService>> services;
    for (int i = 0; i < 10; ++i) {
        std::string tenant = "tenant-" + std::to_string(i);
        auto result = plane.invoke(echo_request(tenant, DeployMode::Shared));
        REQUIRE(result.ok());
        services.push_back(plane.tenant_service(tenant));
    }
    CHECK(plane.stats().live_services == 10);
    std::set<const svc::TenantService*> unique;
    for (const auto& service : services) {
        REQUIRE(service != nullptr);
        unique.insert(service.get());
    }
    CHECK(unique.size() == 10);
}

TEST_CASE("gateway-interactive invoke exposes the port while running") {
    ControlPlane plane(test_config("gateway"));
    InvocationRequest req;
    req.tenant_id = "ti";
    req.function = "echo";
    req.mode = DeployMode::Shared;
    req.gateway_interactive = true;

    struct PortCatcher : InvokeObserver {
        std::mutex m;
        std::condition_variable cv;
        std::optional<uint16_t> port;
        void on_started(uint16_t gateway_port) override {
            std::lock_guard lk(m);
            port = gateway_port;
            cv.notify_all();
        }
    } catcher;

    std::thread invoker([&] {
        auto result = plane.invoke(req, &catcher);
        REQUIRE(result.ok());
        CHECK(result.value().exit_status == 0);
    });
    {
        std::unique_lock lk(catcher.m);
        REQUIRE(catcher.cv.wait_for(lk, std::chrono::seconds(5),
                                    [&] { return catcher.port.has_value(); }));
    }
    auto client = util::TcpStream::connect("127.0.0.1", *catcher.port);
    REQUIRE(client.has_value());
    REQUIRE(client->write_all(to_bytes("roundtrip")));
    std::array<std::byte, 9> buf;
    REQUIRE(client->read_exact(buf, std::chrono::milliseconds(5000)));
    CHECK(to_string(buf) == "roundtrip");
    client->shutdown_write();
    invoker.join();
}

TEST_CASE("reap honors liveness and the keep-alive deadline") {
    auto config = test_config("reap");
    config.keepalive_ms = 50;
    ControlPlane plane(config);
    REQUIRE(plane.invoke(echo_request("t", DeployMode::Shared)).ok());
    CHECK(plane.stats().live_services == 1);

    // deadline not yet reached
    CHECK(plane.reap(std::chrono::steady_clock::now()) == 0);
    // past the deadline the idle service goes away and the token comes back
    auto later = std::chrono::steady_clock::now() + std::chrono::milliseconds(200);
    CHECK(plane.reap(later) == 1);
    CHECK(plane.stats().live_services == 0);
    auto pool = plane.namespace_pool_stats();
    CHECK(pool.acquired == pool.released);
}

TEST_CASE("a service with live uvms is never reaped") {
    auto config = test_config("reap_live");
    config.keepalive_ms = 1;
    ControlPlane plane(config);
    InvocationRequest req;
    req.tenant_id = "t";
    req.function = "sleep";
    req.argv = {"300"};
    req.mode = DeployMode::Shared;
    std::thread invoker([&] { REQUIRE(plane.invoke(req).ok()); });
    // wait until the service exists and the uvm is live
    for (int i = 0; i < 200 && plane.live_uvms() == 0; ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    CHECK(plane.live_uvms() == 1);
    auto far_future = std::chrono::steady_clock::now() + std::chrono::hours(1);
    CHECK(plane.reap(far_future) == 0);  // busy service survives
    invoker.join();
    CHECK(plane.reap(far_future) == 1);  // idle now, reapable
}

TEST_CASE("token conservation across a randomized invoke/reap schedule") {
    auto config = test_config("tokens");
    config.keepalive_ms = 10;
    ControlPlane plane(config);
    std::mt19937_64 rng(77);
    for (int i = 0; i < 40; ++i) {
        std::string tenant = "t" + std::to_string(rng() % 5);
        DeployMode mode = (rng() % 3 == 0) ? DeployMode::OneToOne : DeployMode::Shared;
        REQUIRE(plane.invoke(echo_request(tenant, mode)).ok());
        if (rng() % 4 == 0) {
            plane.reap(std::chrono::steady_clock::now() + std::chrono::milliseconds(50));
        }
    }
    plane.reap(std::chrono::steady_clock::now() + std::chrono::hours(1));
    auto pool = plane.namespace_pool_stats();
    auto stats = plane.stats();
    CHECK(pool.acquired == pool.released + stats.tokens_held);
    CHECK(stats.tokens_held == stats.live_services);
}

TEST_CASE("shared mode never runs two services for one tenant concurrently") {
    ControlPlane plane(test_config("herd"));
    constexpr int kThreads = 8;
    std::vector<std::thread> threads;
    std::atomic<int> failures{0};
    for (int i = 0; i < kThreads; ++i) {
        threads.emplace_back([&] {
            auto result = plane.invoke(echo_request("same-tenant", DeployMode::Shared));
            if (!result.ok() || result.value().exit_status != 0) failures.fetch_add(1);
        });
    }
    for (auto& t : threads) t.join();
    CHECK(failures.load() == 0);
    CHECK(plane.stats().services_created == 1);
    CHECK(plane.stats().live_services == 1);
    CHECK(plane.live_uvms() == 0);
}

TEST_CASE("config round-trips through maps and rejects junk") {
    PlaneConfig config;
    util::IniMap good = {{"keepalive_ms", "1234"}, {"strict_page_mode", "true"},
                         {"default_mode", "one_to_one"}};
    CHECK_FALSE(config.apply(good).has_value());
    CHECK(config.keepalive_ms == 1234);
    CHECK(config.strict_page_mode);
    CHECK(config.default_mode == "one_to_one");

    util::IniMap bad_key = {{"no_such_key", "1"}};
    auto err = config.apply(bad_key);
    REQUIRE(err.has_value());
    CHECK(*err == "no_such_key");

    util::IniMap bad_value = {{"keepalive_ms", "soon"}};
    CHECK(config.apply(bad_value).has_value());
}

TEST_CASE("daemon serves invoke, stats and a drained shutdown") {
    Daemon daemon(test_config("daemon"));
    auto port = daemon.start(0);
    REQUIRE(port.ok());
    std::thread server([&] { daemon.run(); });

    auto conn = util::TcpStream::connect("127.0.0.1", port.value());
    REQUIRE(conn.has_value());

    REQUIRE(conn->write_line(
        R"({"cmd":"invoke","tenant":"d1","function":"echo","mode":"shared","payload":"hi"})"));
    auto line = conn->read_line(std::chrono::milliseconds(15000));
    REQUIRE(line.has_value());
    auto result = nlohmann::json::parse(*line);
    CHECK(result["event"] == "result");
    CHECK(result["exit_status"] == 0);
    auto payload = util::from_hex(result["payload_hex"].get<std::string>());
    REQUIRE(payload.has_value());
    CHECK(to_string(*payload) == "hi");
    CHECK(result["phases"]["completion_us"].get<uint64_t>() > 0);

    REQUIRE(conn->write_line(R"({"cmd":"stats"})"));
    auto stats_line = conn->read_line(std::chrono::milliseconds(5000));
    REQUIRE(stats_line.has_value());
    auto stats = nlohmann::json::parse(*stats_line);
    CHECK(stats["invokes_total"] == 1);
    CHECK(stats["live_uvms"] == 0);

    // five slow invokes in flight, then shutdown: all complete, none hang
    std::vector<std::thread> slow;
    std::atomic<int> completed{0};
    for (int i = 0; i < 5; ++i) {
        slow.emplace_back([&, i] {
            auto c = util::TcpStream::connect("127.0.0.1", port.value());
            REQUIRE(c.has_value());
            nlohmann::json req = {{"cmd", "invoke"},
                                  {"tenant", "slow" + std::to_string(i)},
                                  {"function", "sleep"},
                                  {"argv", {"200"}},
                                  {"mode", "shared"}};
            REQUIRE(c->write_line(req.dump()));
            auto r = c->read_line(std::chrono::milliseconds(20000));
            if (r.has_value()) {
                auto j = nlohmann::json::parse(*r);
                if (j.value("event", "") == "result") completed.fetch_add(1);
            }
        });
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    REQUIRE(conn->write_line(R"({"cmd":"shutdown"})"));
    auto bye = conn->read_line(std::chrono::milliseconds(5000));
    REQUIRE(bye.has_value());
    for (auto& t : slow) t.join();
    server.join();
    CHECK(completed.load() == 5);
}
