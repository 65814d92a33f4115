#include "mksv/ctrl/daemon.hpp"

#include <cerrno>
#include <cstring>

#include <json.hpp>

#include "mksv/util/hex.hpp"

namespace mksv::ctrl {

using nlohmann::json;

std::string invocation_result_to_json(const InvocationResult& result) {
    json j;
    j["event"] = "result";
    j["tenant"] = result.tenant_id;
    j["uvm_id"] = result.uvm_id;
    j["exit_status"] = result.exit_status;
    j["error"] = result.error == 0
                     ? ""
                     : ikc::to_string(static_cast<ErrorCode>(result.error));
    j["phases"] = {{"service_acquire_us", result.service_acquire_us},
                   {"uvm_boot_us", result.uvm_boot_us},
                   {"first_byte_us", result.first_byte_us},
                   {"completion_us", result.completion_us}};
    j["work"] = {{"service_constructed", result.work.service_constructed},
                 {"pool_refill_inline", result.work.pool_refill_inline},
                 {"namespace_initialized", result.work.namespace_initialized}};
    if (result.gateway_port.has_value()) {
        j["gateway_port"] = *result.gateway_port;
    } else {
        j["gateway_port"] = nullptr;
    }
    j["payload_hex"] = util::to_hex(result.payload);
    json phases = json::array();
    for (const auto& phase : result.boot_report.phases) {
        phases.push_back({{"name", phase.name}, {"us", phase.micros}});
    }
    j["boot_phases"] = phases;
    j["boot_total_us"] = result.boot_report.total_micros;
    return j.dump();
}

std::string plane_stats_to_json(const PlaneStats& stats) {
    json j;
    j["invokes_total"] = stats.invokes_total;
    j["invoke_errors"] = stats.invoke_errors;
    j["live_uvms"] = stats.live_uvms;
    j["live_services"] = stats.live_services;
    j["tokens_held"] = stats.tokens_held;
    j["namespace_acquired"] = stats.namespace_acquired;
    j["namespace_released"] = stats.namespace_released;
    j["services_created"] = stats.services_created;
    j["services_reaped"] = stats.services_reaped;
    return j.dump();
}

Daemon::Daemon(PlaneConfig config, const uk::ProgramRegistry& registry)
    : plane_(std::move(config), registry) {}

Daemon::~Daemon() {
    request_shutdown();
    std::lock_guard lk(workers_mutex_);
    for (auto& worker : workers_) {
        if (worker.joinable()) worker.join();
    }
}

util::Result<uint16_t, int> Daemon::start(uint16_t port) {
    auto listener = util::TcpListener::bind(port);
    if (!listener) return errno == 0 ? EADDRINUSE : errno;
    listener_ = std::move(*listener);
    port_ = listener_.port();
    plane_.start_reaper();
    return port_;
}

void Daemon::run() {
    while (!shutdown_requested_.load(std::memory_order_acquire)) {
        auto stream = listener_.accept(std::chrono::milliseconds(100));
        if (!stream) continue;
        std::lock_guard lk(workers_mutex_);
        workers_.emplace_back(
            [this, s = std::move(*stream)]() mutable { serve_connection(std::move(s)); });
    }
    plane_.drain_and_stop();
}

void Daemon::request_shutdown() {
    shutdown_requested_.store(true, std::memory_order_release);
}

void Daemon::serve_connection(util::TcpStream stream) {
    for (;;) {
        if (shutdown_requested_.load(std::memory_order_acquire)) return;
        auto line = stream.read_line(std::chrono::milliseconds(200));
        if (!line.has_value()) {
            if (errno == ETIMEDOUT) continue;
            return;  // client hung up
        }
        std::string reply = handle_command(*line, stream);
        if (!stream.write_line(reply)) return;
        if (shutdown_requested_.load(std::memory_order_acquire)) return;
    }
}

std::string Daemon::handle_command(const std::string& line, util::TcpStream& stream) {
    json cmd;
    try {
        cmd = json::parse(line);
    } catch (const std::exception& e) {
        return json{{"error", std::string("bad_request: ") + e.what()}}.dump();
    }
    std::string op = cmd.value("cmd", "");

    if (op == "stats") {
        return plane_stats_to_json(plane_.stats());
    }
    if (op == "drain") {
        draining_.store(true, std::memory_order_release);
        return json{{"ok", true}, {"draining", true}}.dump();
    }
    if (op == "shutdown") {
        request_shutdown();
        return json{{"ok", true}}.dump();
    }
    if (op != "invoke") {
        return json{{"error", "unknown_command"}}.dump();
    }
    if (draining_.load(std::memory_order_acquire)) {
        return json{{"error", "draining"}}.dump();
    }

    InvocationRequest request;
    request.tenant_id = cmd.value("tenant", "");
    request.function = cmd.value("function", "echo");
    auto mode = deploy_mode_from(cmd.value("mode", plane_.config().default_mode));
    if (!mode.has_value() || request.tenant_id.empty()) {
        return json{{"error", "bad_request: mode/tenant"}}.dump();
    }
    request.mode = *mode;
    request.stdio =
        cmd.value("stdio", "stream") == "pull" ? uk::StdioMode::Pull : uk::StdioMode::Stream;
    if (cmd.contains("argv")) {
        for (const auto& arg : cmd["argv"]) request.argv.push_back(arg.get<std::string>());
    }
    if (cmd.contains("payload_hex")) {
        auto bytes = util::from_hex(cmd["payload_hex"].get<std::string>());
        if (!bytes.has_value()) return json{{"error", "bad_request: payload_hex"}}.dump();
        request.inline_payload = std::move(*bytes);
    } else if (cmd.contains("payload")) {
        auto text = cmd["payload"].get<std::string>();
        std::vector<std::byte> bytes(text.size());
        std::memcpy(bytes.data(), text.data(), text.size());
        request.inline_payload = std::move(bytes);
    }
    request.gateway_interactive = cmd.value("gateway", false);

    struct StartedEmitter : InvokeObserver {
        util::TcpStream* stream = nullptr;
        bool enabled = false;
        void on_started(uint16_t gateway_port) override {
            if (!enabled) return;
            stream->write_line(
                json{{"event", "started"}, {"gateway_port", gateway_port}}.dump());
        }
    } emitter;
    emitter.stream = &stream;
    emitter.enabled = request.gateway_interactive;

    auto result = plane_.invoke(request, &emitter);
    if (!result.ok()) {
        return json{{"event", "result"}, {"error", ikc::to_string(result.error())}}.dump();
    }
    return invocation_result_to_json(result.value());
}

}  // namespace mksv::ctrl
