#include "mksv/util/net.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace mksv::util {

namespace {

bool wait_readable(int fd, std::optional<std::chrono::milliseconds> timeout) {
    if (!timeout) return true;
    struct pollfd pfd{fd, POLLIN, 0};
    int ms = static_cast<int>(timeout->count());
    int rc = ::poll(&pfd, 1, ms);
    if (rc == 0) errno = ETIMEDOUT;
    return rc > 0;
}

}  // namespace

TcpStream::~TcpStream() {
    close();
}

TcpStream::TcpStream(TcpStream&& other) noexcept
    : fd_(other.fd_), line_buf_(std::move(other.line_buf_)) {
    other.fd_ = -1;
}

TcpStream& TcpStream::operator=(TcpStream&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        line_buf_ = std::move(other.line_buf_);
        other.fd_ = -1;
    }
    return *this;
}

std::optional<TcpStream> TcpStream::connect(const std::string& host, uint16_t port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return std::nullopt;
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        return std::nullopt;
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        return std::nullopt;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return TcpStream(fd);
}

bool TcpStream::write_all(std::span<const std::byte> data) {
    size_t sent = 0;
    while (sent < data.size()) {
        ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n <= 0) {
            if (n < 0 && errno == EINTR) continue;
            return false;
        }
        sent += static_cast<size_t>(n);
    }
    return true;
}

ssize_t TcpStream::read_some(std::span<std::byte> buf,
                             std::optional<std::chrono::milliseconds> timeout) {
    if (!wait_readable(fd_, timeout)) return -1;
    for (;;) {
        ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
        if (n < 0 && errno == EINTR) continue;
        return n;
    }
}

bool TcpStream::read_exact(std::span<std::byte> buf,
                           std::optional<std::chrono::milliseconds> timeout) {
    size_t got = 0;
    while (got < buf.size()) {
        ssize_t n = read_some(buf.subspan(got), timeout);
        if (n <= 0) return false;
        got += static_cast<size_t>(n);
    }
    return true;
}

std::optional<std::string> TcpStream::read_line(
    std::optional<std::chrono::milliseconds> timeout) {
    for (;;) {
        auto pos = line_buf_.find('\n');
        if (pos != std::string::npos) {
            std::string line = line_buf_.substr(0, pos);
            line_buf_.erase(0, pos + 1);
            return line;
        }
        std::byte chunk[4096];
        ssize_t n = read_some(chunk, timeout);
        if (n <= 0) return std::nullopt;
        line_buf_.append(reinterpret_cast<const char*>(chunk), static_cast<size_t>(n));
    }
}

bool TcpStream::write_line(const std::string& line) {
    std::string framed = line + "\n";
    return write_all(std::as_bytes(std::span(framed.data(), framed.size())));
}

void TcpStream::shutdown_write() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

void TcpStream::shutdown_both() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void TcpStream::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

TcpListener::~TcpListener() {
    close();
}

TcpListener::TcpListener(TcpListener&& other) noexcept : fd_(other.fd_), port_(other.port_) {
    other.fd_ = -1;
}

TcpListener& TcpListener::operator=(TcpListener&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        port_ = other.port_;
        other.fd_ = -1;
    }
    return *this;
}

std::optional<TcpListener> TcpListener::bind(uint16_t port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return std::nullopt;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(fd, 64) != 0) {
        ::close(fd);
        return std::nullopt;
    }
    socklen_t len = sizeof(addr);
    if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
        ::close(fd);
        return std::nullopt;
    }
    TcpListener listener;
    listener.fd_ = fd;
    listener.port_ = ntohs(addr.sin_port);
    return listener;
}

std::optional<TcpStream> TcpListener::accept(
    std::optional<std::chrono::milliseconds> timeout) {
    if (!wait_readable(fd_, timeout)) return std::nullopt;
    int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) return std::nullopt;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return TcpStream(fd);
}

void TcpListener::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

}  // namespace mksv::util
