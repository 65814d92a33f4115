#include "mksv/ikc/dump.hpp"

#include <cstdio>
#include <memory>
#include <mutex>

#include <json.hpp>

#include "mksv/ikc/channel.hpp"
#include "mksv/util/hex.hpp"

namespace mksv::ikc {

namespace {

nlohmann::json frame_to_json(const IkcFrame& frame) {
    nlohmann::json j;
    j["kind"] = to_string(frame.kind);
    j["uvm_id"] = frame.uvm_id;
    j["thread_id"] = frame.thread_id;
    j["call"] = call_name(frame.call_id);
    j["call_id"] = static_cast<uint16_t>(frame.call_id);
    j["status"] = frame.status;
    if (frame.status != kStatusOk) {
        j["error"] = to_string(static_cast<ErrorCode>(frame.status));
    }
    j["seq"] = frame.seq;
    j["payload_len"] = frame.payload.size();
    j["payload_hex"] = util::to_hex(frame.payload);
    return j;
}

}  // namespace

std::string frame_dump_line(std::span<const std::byte> raw, const IkcFrame& frame) {
    nlohmann::json j = frame_to_json(frame);
    j["hex"] = util::to_hex(raw);
    return j.dump();
}

std::string dump_hex_input(const std::string& hex_line) {
    nlohmann::json j;
    auto bytes = util::from_hex(hex_line);
    if (!bytes.has_value()) {
        j["hex"] = hex_line;
        j["error"] = "invalid_hex";
        return j.dump();
    }
    auto frame = decode_frame(*bytes);
    if (!frame.ok()) {
        j["hex"] = hex_line;
        j["error"] = to_string(frame.error());
        return j.dump();
    }
    return frame_dump_line(*bytes, frame.value());
}

void enable_frame_dump(const std::string& path) {
    if (path.empty()) {
        set_global_frame_tap(nullptr);
        return;
    }
    struct Sink {
        FILE* file;
        bool owned;
        std::mutex mutex;
        ~Sink() {
            if (owned && file != nullptr) std::fclose(file);
        }
    };
    auto sink = std::make_shared<Sink>();
    if (path == "-") {
        sink->file = stderr;
        sink->owned = false;
    } else {
        sink->file = std::fopen(path.c_str(), "w");
        sink->owned = true;
        if (sink->file == nullptr) return;
    }
    set_global_frame_tap([sink](const char* direction, std::span<const std::byte> raw,
                                const IkcFrame& frame) {
        nlohmann::json j = frame_to_json(frame);
        j["hex"] = util::to_hex(raw);
        j["direction"] = direction;
        std::lock_guard lk(sink->mutex);
        std::fprintf(sink->file, "%s\n", j.dump().c_str());
        std::fflush(sink->file);
    });
}

}  // namespace mksv::ikc
