#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <json.hpp>

#include "mksv/sysvm/tenant_service.hpp"
#include "mksv/ukernel/posix_shim.hpp"
#include "mksv/ukernel/programs.hpp"
#include "mksv/ukernel/user_vm.hpp"
#include "mksv/util/net.hpp"

using namespace mksv;
using namespace mksv::svc;
using namespace mksv::uk;
using ikc::CallId;
using ikc::FrameKind;
using ikc::IkcFrame;

namespace {

std::filesystem::path fresh_scratch(const std::string& tag) {
    auto root = std::filesystem::temp_directory_path() /
                ("mksv_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(std::random_device{}()));
    std::filesystem::create_directories(root);
    return root;
}

ServiceConfig service_config(const std::string& tag) {
    ServiceConfig config;
    config.scratch_root = fresh_scratch(tag);
    config.record_exec_trace = true;
    config.transport_buffer_bytes = 16 * 1024;
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

BridgeMode bridge_mode(StdioMode stdio) {
    return stdio == StdioMode::Pull ? BridgeMode::Pull : BridgeMode::Stream;
}

struct AttachedVm {
    std::unique_ptr<UserVm> vm;
    uint16_t gateway_port = 0;
};

AttachedVm boot_attached(TenantService& service, const Manifest& manifest,
                         const UvmConfig& config,
                         const ProgramRegistry& registry = ProgramRegistry::builtin()) {
    auto vm = UserVm::boot(manifest, BootMode::Attached, config, registry);
    REQUIRE(vm.ok());
    auto reg = service.register_uvm(vm.value()->id(), vm.value()->channel(),
                                    bridge_mode(manifest.stdio));
    REQUIRE(reg.ok());
    return {vm.take(), reg.value().gateway_port};
}

int finish(TenantService& service, AttachedVm& avm,
           std::chrono::milliseconds timeout = std::chrono::milliseconds(10000)) {
    REQUIRE(avm.vm->wait(timeout));
    int status = avm.vm->exit_status();
    REQUIRE(service.unregister_uvm(avm.vm->id()).ok());
    return status;
}

// Sends `count` marshaled clock calls and checks each response.
ProgramMain clock_caller(int count) {
    return [count](GuestApi& api, PosixIo&, const Manifest&) {
        ikc::MarshaledOp op;
        op.tag = ikc::OpTag::Clock;
        auto payload = ikc::marshal_op(op).take();
        for (int i = 0; i < count; ++i) {
            auto reply = api.call_remote(payload);
            if (!reply.ok()) return 1;
            if (reply.value().status != ikc::kStatusOk) return 2;
        }
        return 0;
    };
}

}  // namespace

TEST_CASE("filter policy is pure and ordered") {
    FilterPolicy policy;
    policy.open_path_prefixes = {"/tenant/"};

    ikc::MarshaledOp open_etc;
    open_etc.tag = ikc::OpTag::Open;
    open_etc.path = "/etc/passwd";
    ikc::MarshaledOp open_ok = open_etc;
    open_ok.path = "/tenant/data.txt";

    CHECK(policy.evaluate(CallId::kSend, &open_etc) == Verdict::Deny);
    CHECK(policy.evaluate(CallId::kSend, &open_ok) == Verdict::Allow);

    // predicate oracle over a path corpus
    std::vector<std::string> corpus = {"/tenant/a",   "/tenant/b/c", "/etc/passwd",
                                       "/tenant",     "tenant/a",    "/tmp/x",
                                       "/tenant/../x"};
    for (const auto& path : corpus) {
        ikc::MarshaledOp op;
        op.tag = ikc::OpTag::Open;
        op.path = path;
        bool expect_allow = path.rfind("/tenant/", 0) == 0;
        CHECK(policy.evaluate(CallId::kSend, &op) ==
              (expect_allow ? Verdict::Allow : Verdict::Deny));
        // purity: same inputs, same verdict
        CHECK(policy.evaluate(CallId::kSend, &op) == policy.evaluate(CallId::kSend, &op));
    }

    FilterPolicy deny = FilterPolicy::deny_all();
    CHECK(deny.evaluate(CallId::kSend, nullptr) == Verdict::Deny);
    deny.call_rules[CallId::kSend] = Verdict::Allow;
    CHECK(deny.evaluate(CallId::kSend, nullptr) == Verdict::Allow);
}

TEST_CASE("backend round-trips files under its scratch root") {
    HostBackend backend(fresh_scratch("backend"));
    auto fd = backend.open("notes.txt", ikc::kOpenWrite | ikc::kOpenCreate);
    REQUIRE(fd.ok());
    auto data = to_bytes("hello byte");
    REQUIRE(backend.write(fd.value(), data).ok());
    REQUIRE(backend.close(fd.value()).ok());

    auto rd = backend.open("notes.txt", ikc::kOpenRead);
    REQUIRE(rd.ok());
    auto back = backend.read(rd.value(), 64);
    REQUIRE(back.ok());
    CHECK(to_string(back.value()) == "hello byte");
    REQUIRE(backend.close(rd.value()).ok());

    auto bad = backend.read(rd.value(), 4);
    REQUIRE_FALSE(bad.ok());
    CHECK(bad.error() == EBADF);

    auto escape = backend.open("../outside", ikc::kOpenWrite | ikc::kOpenCreate);
    REQUIRE_FALSE(escape.ok());
    CHECK(escape.error() == EACCES);
}

TEST_CASE("register assigns distinct gateway ports and ids never come back") {
    TenantService service("t1", service_config("ports"));
    auto ch1 = std::make_shared<ikc::IkcChannel>();
    auto ch2 = std::make_shared<ikc::IkcChannel>();
    auto r1 = service.register_uvm(101, ch1, BridgeMode::Stream);
    auto r2 = service.register_uvm(102, ch2, BridgeMode::Stream);
    REQUIRE(r1.ok());
    REQUIRE(r2.ok());
    CHECK(r1.value().gateway_port != r2.value().gateway_port);

    auto dup = service.register_uvm(101, ch1, BridgeMode::Stream);
    REQUIRE_FALSE(dup.ok());

    REQUIRE(service.unregister_uvm(101).ok());
    auto again = service.register_uvm(101, std::make_shared<ikc::IkcChannel>(),
                                      BridgeMode::Stream);
    REQUIRE_FALSE(again.ok());  // ids are never reused

    REQUIRE(service.unregister_uvm(102).ok());
}

TEST_CASE("dispatch rejects frames for unregistered uvms") {
    TenantService service("t1", service_config("reject"));
    auto ch = std::make_shared<ikc::IkcChannel>();
    IkcFrame frame;
    frame.kind = FrameKind::CallRequest;
    frame.uvm_id = 777;
    frame.thread_id = 0;
    frame.call_id = CallId::kSend;
    frame.seq = 9;
    service.dispatch(frame, ch);

    auto resp = ch->guest_recv();
    REQUIRE(resp.ok());
    CHECK(resp.value().kind == FrameKind::CallResponse);
    CHECK(resp.value().status == static_cast<uint16_t>(ErrorCode::VmTerminated));
    CHECK(resp.value().seq == 9);
    CHECK(service.stats().unknown_uvm == 1);
}

TEST_CASE("requests from one guest thread all run on one worker in order") {
    TenantService service("t1", service_config("order1"));
    auto registry = registry_with("caller", clock_caller(100));
    auto avm = boot_attached(service, manifest_for("caller"), small_config(), registry);
    CHECK(finish(service, avm) == 0);

    auto trace = service.exec_trace();
    REQUIRE(trace.size() == 100);
    uint32_t worker = trace.front().worker_id;
    uint64_t last_seq = 0;
    for (const auto& rec : trace) {
        CHECK(rec.worker_id == worker);
        CHECK(rec.seq > last_seq);
        last_seq = rec.seq;
    }
}

TEST_CASE("two guest threads keep per-thread order across distinct workers") {
    TenantService service("t1", service_config("order2"));
    auto registry = registry_with("pair", [](GuestApi& api, PosixIo&, const Manifest&) {
        ikc::MarshaledOp op;
        op.tag = ikc::OpTag::Clock;
        auto payload = ikc::marshal_op(op).take();
        auto worker = [payload](GuestApi& capi) {
            for (int i = 0; i < 50; ++i) {
                auto reply = capi.call_remote(payload);
                if (!reply.ok() || reply.value().status != ikc::kStatusOk) return 1;
            }
            return 0;
        };
        auto child = api.create_thread(worker);
        if (!child.ok()) return 1;
        int mine = worker(api);
        auto theirs = api.join_thread(child.value());
        return (mine == 0 && theirs.ok() && theirs.value() == 0) ? 0 : 2;
    });
    auto avm = boot_attached(service, manifest_for("pair"), small_config(), registry);
    CHECK(finish(service, avm) == 0);

    auto trace = service.exec_trace();
    REQUIRE(trace.size() == 100);
    std::map<uint32_t, uint64_t> last_seq;
    std::map<uint32_t, uint32_t> worker_of;
    for (const auto& rec : trace) {
        auto [it, fresh] = worker_of.try_emplace(rec.thread_id, rec.worker_id);
        if (!fresh) CHECK(it->second == rec.worker_id);  // binding is stable
        CHECK(rec.seq > last_seq[rec.thread_id]);        // per-thread seq order
        last_seq[rec.thread_id] = rec.seq;
    }
    CHECK(worker_of.size() == 2);
    CHECK(worker_of[0] != worker_of[1]);
}

TEST_CASE("deny-all policy short-circuits before the backend") {
    auto config = service_config("deny");
    config.filter = FilterPolicy::deny_all();
    TenantService service("t1", config);

    auto registry = registry_with("denied", [](GuestApi& api, PosixIo&, const Manifest&) {
        ikc::MarshaledOp op;
        op.tag = ikc::OpTag::Clock;
        auto payload = ikc::marshal_op(op).take();
        int denied = 0;
        for (int i = 0; i < 1000; ++i) {
            auto reply = api.call_remote(payload);
            if (!reply.ok()) return 1;
            if (reply.value().status == static_cast<uint16_t>(ErrorCode::FilterDenied)) {
                ++denied;
            }
        }
        return denied == 1000 ? 0 : 2;
    });
    auto avm = boot_attached(service, manifest_for("denied"), small_config(), registry);
    CHECK(finish(service, avm) == 0);
    auto stats = service.stats();
    CHECK(stats.backend_invocations == 0);
    CHECK(stats.denied == 1000);
}

TEST_CASE("guest file I/O lands under the service scratch root, bulk both ways") {
    TenantService service("t1", service_config("io"));
    Manifest m = manifest_for("io-heavy");
    m.argv = {"1048576", "1"};  // one 1 MiB file, written and read back
    auto avm = boot_attached(service, m, small_config());
    uint32_t id = avm.vm->id();
    auto scratch = service.handle_scratch_root(id);
    CHECK(finish(service, avm) == 0);  // program verifies the checksum itself

    CHECK(std::filesystem::exists(scratch / "f0"));
    CHECK(std::filesystem::file_size(scratch / "f0") == 1048576);
}

TEST_CASE("gateway bridges guest stdio to a tcp client") {
    TenantService service("t1", service_config("gw"));
    auto avm = boot_attached(service, manifest_for("echo"), small_config());

    auto client = util::TcpStream::connect("127.0.0.1", avm.gateway_port);
    REQUIRE(client.has_value());
    REQUIRE(client->write_all(to_bytes("ping")));

    std::array<std::byte, 16> buf;
    REQUIRE(client->read_exact(std::span(buf.data(), 4), std::chrono::milliseconds(5000)));
    CHECK(to_string(std::span(buf.data(), 4)) == "ping");

    // second concurrent client is refused
    auto second = util::TcpStream::connect("127.0.0.1", avm.gateway_port);
    REQUIRE(second.has_value());
    std::array<std::byte, 1> one;
    ssize_t n = second->read_some(one, std::chrono::milliseconds(2000));
    CHECK(n == 0);  // accepted then closed

    // disconnect maps to EOF on the guest read and the program exits
    client->shutdown_write();
    CHECK(finish(service, avm) == 0);
}

TEST_CASE("pull-mode echo takes the bulk path for large payloads") {
    TenantService service("t1", service_config("bulkecho"));
    auto avm = boot_attached(service, manifest_for("echo", StdioMode::Pull), small_config());

    auto client = util::TcpStream::connect("127.0.0.1", avm.gateway_port);
    REQUIRE(client.has_value());

    std::mt19937_64 rng(5);
    std::vector<std::byte> payload(64 * 1024);
    for (auto& b : payload) b = static_cast<std::byte>(rng() & 0xFF);

    std::vector<std::byte> framed;
    uint32_t len = static_cast<uint32_t>(payload.size());
    for (int i = 0; i < 4; ++i) framed.push_back(static_cast<std::byte>((len >> (8 * i)) & 0xFF));
    framed.insert(framed.end(), payload.begin(), payload.end());
    REQUIRE(client->write_all(framed));

    std::vector<std::byte> echoed(framed.size());
    REQUIRE(client->read_exact(echoed, std::chrono::milliseconds(10000)));
    CHECK(echoed == framed);

    client->shutdown_write();
    CHECK(finish(service, avm) == 0);

    // the large write went through push, not a pile of inline sends
    auto trace = avm.vm->context().kcall_trace();
    int pushes = 0;
    for (CallId id : trace) {
        if (id == CallId::kPush) ++pushes;
    }
    CHECK(pushes >= 1);
}

TEST_CASE("handles are isolated: no cross-uvm scratch or fd access") {
    TenantService service("t1", service_config("isolate"));

    auto write_program = [](std::string content) {
        return [content](GuestApi&, PosixIo& io, const Manifest&) {
            auto fd = io.open("mine.txt", ikc::kOpenWrite | ikc::kOpenCreate);
            if (!fd.ok()) return 1;
            auto bytes = to_bytes(content);
            if (!io.write(fd.value(), bytes).ok()) return 2;
            if (!io.close(fd.value()).ok()) return 3;
            return 0;
        };
    };
    ProgramRegistry registry;
    registry.add("writer-a", write_program("alpha"));
    registry.add("writer-b", write_program("beta"));

    auto a = boot_attached(service, manifest_for("writer-a"), small_config(), registry);
    auto b = boot_attached(service, manifest_for("writer-b"), small_config(), registry);
    auto scratch_a = service.handle_scratch_root(a.vm->id());
    auto scratch_b = service.handle_scratch_root(b.vm->id());
    CHECK(finish(service, a) == 0);
    CHECK(finish(service, b) == 0);

    std::ifstream fa(scratch_a / "mine.txt");
    std::ifstream fb(scratch_b / "mine.txt");
    std::string ca, cb;
    fa >> ca;
    fb >> cb;
    CHECK(ca == "alpha");
    CHECK(cb == "beta");
    CHECK(scratch_a != scratch_b);
}

TEST_CASE("fresh services are indistinguishable before registration") {
    ServiceConfig config = service_config("fp1");
    config.record_exec_trace = false;
    config.snapshot_image.assign(1 << 16, std::byte{7});
    ServiceConfig config2 = config;
    config2.scratch_root = fresh_scratch("fp2");  // per-instance overlay differs

    TenantService s1("tenant-a", config);
    TenantService s2("tenant-b", config2);
    CHECK(s1.fingerprint() == s2.fingerprint());

    // divergence once one of them serves traffic
    auto ch = std::make_shared<ikc::IkcChannel>();
    REQUIRE(s1.register_uvm(1, ch, BridgeMode::Stream).ok());
    CHECK(s1.fingerprint() != s2.fingerprint());
    REQUIRE(s1.unregister_uvm(1).ok());
}

TEST_CASE("admin endpoint answers stats, register and shutdown") {
    auto service = std::make_unique<TenantService>("t9", service_config("admin"));
    auto port = service->start_admin();
    REQUIRE(port.ok());

    auto conn = util::TcpStream::connect("127.0.0.1", port.value());
    REQUIRE(conn.has_value());

    REQUIRE(conn->write_line(R"({"cmd":"stats"})"));
    auto stats_line = conn->read_line(std::chrono::milliseconds(2000));
    REQUIRE(stats_line.has_value());
    auto stats = nlohmann::json::parse(*stats_line);
    CHECK(stats["tenant"] == "t9");
    CHECK(stats["live_uvms"] == 0);

    REQUIRE(conn->write_line(R"({"cmd":"register","uvm_id":55,"stdio":"stream"})"));
    auto reg_line = conn->read_line(std::chrono::milliseconds(2000));
    REQUIRE(reg_line.has_value());
    auto reg = nlohmann::json::parse(*reg_line);
    CHECK(reg.contains("gateway_port"));
    CHECK(reg["gateway_port"].get<int>() > 0);

    REQUIRE(conn->write_line(R"({"cmd":"shutdown"})"));
    auto bye = conn->read_line(std::chrono::milliseconds(2000));
    REQUIRE(bye.has_value());
    CHECK(nlohmann::json::parse(*bye)["ok"] == true);
}
