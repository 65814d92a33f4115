#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mksv::util {

/// Thin RAII wrappers over IPv4 loopback sockets. Everything binds to
/// 127.0.0.1; this artifact has no cross-host story.
class TcpStream {
  public:
    TcpStream() = default;
    explicit TcpStream(int fd) : fd_(fd) {}
    ~TcpStream();
    TcpStream(TcpStream&& other) noexcept;
    TcpStream& operator=(TcpStream&& other) noexcept;
    TcpStream(const TcpStream&) = delete;
    TcpStream& operator=(const TcpStream&) = delete;

    static std::optional<TcpStream> connect(const std::string& host, uint16_t port);

    bool valid() const { return fd_ >= 0; }

    /// Writes the whole span; false on error/peer reset.
    bool write_all(std::span<const std::byte> data);

    /// Reads up to buf.size() bytes. Returns bytes read, 0 on orderly EOF,
    /// -1 on error or timeout.
    ssize_t read_some(std::span<std::byte> buf,
                      std::optional<std::chrono::milliseconds> timeout = std::nullopt);

    /// Reads exactly buf.size() bytes unless EOF/error intervenes.
    bool read_exact(std::span<std::byte> buf,
                    std::optional<std::chrono::milliseconds> timeout = std::nullopt);

    /// Reads a '\n'-terminated line (newline stripped); nullopt on EOF/error.
    std::optional<std::string> read_line(
        std::optional<std::chrono::milliseconds> timeout = std::nullopt);

    bool write_line(const std::string& line);

    void shutdown_write();
    void shutdown_both();
    void close();
    int fd() const { return fd_; }

  private:
    int fd_ = -1;
    std::string line_buf_;
};

class TcpListener {
  public:
    TcpListener() = default;
    ~TcpListener();
    TcpListener(TcpListener&& other) noexcept;
    TcpListener& operator=(TcpListener&& other) noexcept;
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    /// Binds 127.0.0.1:port (0 picks an ephemeral port).
    static std::optional<TcpListener> bind(uint16_t port);

    std::optional<TcpStream> accept(
        std::optional<std::chrono::milliseconds> timeout = std::nullopt);

    uint16_t port() const { return port_; }
    bool valid() const { return fd_ >= 0; }
    void close();

  private:
    int fd_ = -1;
    uint16_t port_ = 0;
};

}  // namespace mksv::util
