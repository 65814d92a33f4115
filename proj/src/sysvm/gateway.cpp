#include "mksv/sysvm/gateway.hpp"

#include <cerrno>

namespace mksv::svc {

using ikc::CallId;
using ikc::FrameKind;
using ikc::IkcFrame;

GatewayBridge::GatewayBridge(uint32_t uvm_id, BridgeMode mode) : uvm_id_(uvm_id), mode_(mode) {}

GatewayBridge::~GatewayBridge() {
    stop();
}

util::Result<uint16_t, int> GatewayBridge::start() {
    auto listener = util::TcpListener::bind(0);
    if (!listener) return EADDRINUSE;
    listener_ = std::move(*listener);
    port_ = listener_.port();
    acceptor_ = std::thread([this] { acceptor_loop(); });
    return port_;
}

void GatewayBridge::stop() {
    {
        std::lock_guard lk(mutex_);
        if (stopping_) return;
        stopping_ = true;
        if (client_) client_->shutdown_both();
    }
    cv_.notify_all();
    if (acceptor_.joinable()) acceptor_.join();
    if (reader_.joinable()) reader_.join();
    listener_.close();
    std::lock_guard lk(mutex_);
    client_.reset();
}

void GatewayBridge::attach_channel(std::shared_ptr<ikc::IkcChannel> channel) {
    std::lock_guard lk(mutex_);
    channel_ = std::move(channel);
    if (mode_ == BridgeMode::Stream && channel_) {
        while (!preattach_.empty()) {
            size_t n = std::min(preattach_.size(), ikc::kInlinePayloadMax);
            IkcFrame frame;
            frame.kind = FrameKind::Command;
            frame.uvm_id = uvm_id_;
            frame.thread_id = ikc::kAnyThreadId;
            frame.call_id = CallId::kRecv;
            frame.payload.assign(preattach_.begin(),
                                 preattach_.begin() + static_cast<ptrdiff_t>(n));
            preattach_.erase(preattach_.begin(), preattach_.begin() + static_cast<ptrdiff_t>(n));
            channel_->host_send(frame);
        }
        if (inbound_eof_) {
            IkcFrame eof;
            eof.kind = FrameKind::Command;
            eof.uvm_id = uvm_id_;
            eof.thread_id = ikc::kAnyThreadId;
            eof.call_id = CallId::kRecv;
            channel_->host_send(eof);
        }
    }
}

void GatewayBridge::acceptor_loop() {
    for (;;) {
        {
            std::lock_guard lk(mutex_);
            if (stopping_) return;
        }
        auto stream = listener_.accept(std::chrono::milliseconds(50));
        if (!stream) continue;
        if (client_active_.load(std::memory_order_acquire)) {
            // single-connection rule: refuse while one is active
            refused_.fetch_add(1, std::memory_order_relaxed);
            stream->close();
            continue;
        }
        if (reader_.joinable()) reader_.join();
        {
            std::lock_guard lk(mutex_);
            if (stopping_) return;
            client_ = std::move(*stream);
            inbound_eof_ = false;
        }
        client_active_.store(true, std::memory_order_release);
        reader_ = std::thread([this] { reader_loop(); });
    }
}

void GatewayBridge::reader_loop() {
    std::array<std::byte, 4096> buf;
    for (;;) {
        {
            std::lock_guard lk(mutex_);
            if (stopping_ || !client_) break;
        }
        ssize_t n = client_->read_some(buf, std::chrono::milliseconds(50));
        if (n > 0) {
            bytes_in_.fetch_add(static_cast<uint64_t>(n), std::memory_order_relaxed);
            forward_inbound(std::span(buf.data(), static_cast<size_t>(n)));
            continue;
        }
        if (n < 0 && errno == ETIMEDOUT) continue;
        // orderly EOF and reset both map to EOF on the guest side
        signal_eof();
        break;
    }
    client_active_.store(false, std::memory_order_release);
}

void GatewayBridge::forward_inbound(std::span<const std::byte> data) {
    std::lock_guard lk(mutex_);
    if (mode_ == BridgeMode::Pull) {
        inbound_.insert(inbound_.end(), data.begin(), data.end());
        cv_.notify_all();
        return;
    }
    if (!channel_) {
        preattach_.insert(preattach_.end(), data.begin(), data.end());
        return;
    }
    size_t off = 0;
    while (off < data.size()) {
        size_t n = std::min(data.size() - off, ikc::kInlinePayloadMax);
        IkcFrame frame;
        frame.kind = FrameKind::Command;
        frame.uvm_id = uvm_id_;
        frame.thread_id = ikc::kAnyThreadId;
        frame.call_id = CallId::kRecv;
        frame.payload.assign(data.begin() + static_cast<ptrdiff_t>(off),
                             data.begin() + static_cast<ptrdiff_t>(off + n));
        channel_->host_send(frame);
        off += n;
    }
}

void GatewayBridge::signal_eof() {
    std::lock_guard lk(mutex_);
    inbound_eof_ = true;
    cv_.notify_all();
    if (mode_ == BridgeMode::Stream && channel_) {
        IkcFrame eof;
        eof.kind = FrameKind::Command;
        eof.uvm_id = uvm_id_;
        eof.thread_id = ikc::kAnyThreadId;
        eof.call_id = CallId::kRecv;
        channel_->host_send(eof);
    }
}

std::optional<std::vector<std::byte>> GatewayBridge::take_inbound(size_t max) {
    std::unique_lock lk(mutex_);
    cv_.wait(lk, [&] { return !inbound_.empty() || inbound_eof_ || stopping_; });
    if (inbound_.empty()) {
        if (inbound_eof_) return std::vector<std::byte>{};  // EOF
        return std::nullopt;                                // stopping
    }
    size_t n = std::min(max, inbound_.size());
    std::vector<std::byte> out(inbound_.begin(), inbound_.begin() + static_cast<ptrdiff_t>(n));
    inbound_.erase(inbound_.begin(), inbound_.begin() + static_cast<ptrdiff_t>(n));
    return out;
}

util::Result<size_t, int> GatewayBridge::send_outbound(std::span<const std::byte> data) {
    std::lock_guard lk(mutex_);
    if (!client_ || stopping_) return ENOTCONN;
    if (!client_->write_all(data)) return EPIPE;
    if (!first_outbound_.has_value()) first_outbound_ = std::chrono::steady_clock::now();
    bytes_out_.fetch_add(data.size(), std::memory_order_relaxed);
    return data.size();
}

std::optional<std::chrono::steady_clock::time_point> GatewayBridge::first_outbound_at() {
    std::lock_guard lk(mutex_);
    return first_outbound_;
}

}  // namespace mksv::svc
