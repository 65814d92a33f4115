#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "mksv/ikc/channel.hpp"
#include "mksv/util/net.hpp"

namespace mksv::svc {

enum class BridgeMode : uint8_t { Stream, Pull };

/// Per-user-VM TCP gateway. One listener, at most one active client
/// connection; concurrent connects are refused (accepted then closed).
///
/// Inbound bytes either stream straight to the guest as credit-gated
/// frames (Stream) or accumulate for sock_recv requests (Pull). Outbound
/// bytes from the guest are written to the client socket.
class GatewayBridge {
  public:
    GatewayBridge(uint32_t uvm_id, BridgeMode mode);
    ~GatewayBridge();

    util::Result<uint16_t, int> start();  // error = errno-style
    void stop();

    /// Supplies the guest channel; inbound bytes buffered before this point
    /// are flushed to it in Stream mode.
    void attach_channel(std::shared_ptr<ikc::IkcChannel> channel);

    /// Pull-mode consumption: blocks until data, EOF (empty result), or the
    /// bridge stops.
    std::optional<std::vector<std::byte>> take_inbound(size_t max);

    /// Writes to the connected client. errno-style ENOTCONN without one.
    util::Result<size_t, int> send_outbound(std::span<const std::byte> data);

    uint16_t port() const { return port_; }
    bool client_active() const { return client_active_.load(std::memory_order_acquire); }
    std::optional<std::chrono::steady_clock::time_point> first_outbound_at();
    uint64_t bytes_in() const { return bytes_in_.load(std::memory_order_relaxed); }
    uint64_t bytes_out() const { return bytes_out_.load(std::memory_order_relaxed); }
    uint64_t refused_connects() const { return refused_.load(std::memory_order_relaxed); }

  private:
    void acceptor_loop();
    void reader_loop();
    void forward_inbound(std::span<const std::byte> data);
    void signal_eof();

    const uint32_t uvm_id_;
    const BridgeMode mode_;
    util::TcpListener listener_;
    uint16_t port_ = 0;

    std::mutex mutex_;
    std::condition_variable cv_;
    std::shared_ptr<ikc::IkcChannel> channel_;
    std::optional<util::TcpStream> client_;
    std::deque<std::byte> inbound_;
    std::deque<std::byte> preattach_;  // stream bytes that arrived before the channel
    bool inbound_eof_ = false;
    bool stopping_ = false;
    std::optional<std::chrono::steady_clock::time_point> first_outbound_;

    std::thread acceptor_;
    std::thread reader_;
    std::atomic<bool> client_active_{false};
    std::atomic<uint64_t> bytes_in_{0};
    std::atomic<uint64_t> bytes_out_{0};
    std::atomic<uint64_t> refused_{0};
};

}  // namespace mksv::svc
