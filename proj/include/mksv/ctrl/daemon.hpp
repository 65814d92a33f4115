#pragma once

#include <atomic>
#include <thread>
#include <vector>

#include "mksv/ctrl/control_plane.hpp"
#include "mksv/util/net.hpp"

namespace mksv::ctrl {

/// Line-delimited JSON control API over loopback TCP. One JSON object per
/// request line; invoke with a gateway source first emits a
/// {"event":"started","gateway_port":N} line, then the result line.
/// Commands: invoke, stats, drain, shutdown.
class Daemon {
  public:
    explicit Daemon(PlaneConfig config,
                    const uk::ProgramRegistry& registry = uk::ProgramRegistry::builtin());
    ~Daemon();

    util::Result<uint16_t, int> start(uint16_t port);
    /// Serves until a shutdown command or request_shutdown() arrives.
    void run();
    void request_shutdown();

    uint16_t port() const { return port_; }
    ControlPlane& plane() { return plane_; }

  private:
    void serve_connection(util::TcpStream stream);
    std::string handle_command(const std::string& line, util::TcpStream& stream);

    ControlPlane plane_;
    util::TcpListener listener_;
    uint16_t port_ = 0;
    std::atomic<bool> shutdown_requested_{false};
    std::atomic<bool> draining_{false};
    std::mutex workers_mutex_;
    std::vector<std::thread> workers_;
};

/// JSON codecs shared by the daemon and the CLI.
std::string invocation_result_to_json(const InvocationResult& result);
std::string plane_stats_to_json(const PlaneStats& stats);

}  // namespace mksv::ctrl
