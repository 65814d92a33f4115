#include "mksv/ctrl/config.hpp"

#include <unistd.h>

#include <cstdlib>

namespace mksv::ctrl {

namespace {

bool parse_bool(const std::string& v, bool& out) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        out = true;
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        out = false;
        return true;
    }
    return false;
}

bool parse_u64(const std::string& v, uint64_t& out) {
    try {
        size_t pos = 0;
        out = std::stoull(v, &pos);
        return pos == v.size();
    } catch (...) {
        return false;
    }
}

}  // namespace

std::optional<std::string> PlaneConfig::apply(const util::IniMap& values) {
    for (const auto& [key, value] : values) {
        uint64_t u = 0;
        bool b = false;
        if (key == "namespace_pool_size" && parse_u64(value, u)) {
            namespace_pool_size = u;
        } else if (key == "service_pool_size" && parse_u64(value, u)) {
            service_pool_size = u;
        } else if (key == "pool_low_water" && parse_u64(value, u)) {
            pool_low_water = u;
        } else if (key == "refill_enabled" && parse_bool(value, b)) {
            refill_enabled = b;
        } else if (key == "keepalive_ms" && parse_u64(value, u)) {
            keepalive_ms = u;
        } else if (key == "invoke_timeout_ms" && parse_u64(value, u)) {
            invoke_timeout_ms = u;
        } else if (key == "worker_cap" && parse_u64(value, u)) {
            worker_cap = u;
        } else if (key == "service_snapshot_bytes" && parse_u64(value, u)) {
            service_snapshot_bytes = u;
        } else if (key == "transport_buffer_bytes" && parse_u64(value, u)) {
            transport_buffer_bytes = u;
        } else if (key == "record_exec_trace" && parse_bool(value, b)) {
            record_exec_trace = b;
        } else if (key == "uvm_image_bytes" && parse_u64(value, u)) {
            uvm_image_bytes = u;
        } else if (key == "strict_page_mode" && parse_bool(value, b)) {
            strict_page_mode = b;
        } else if (key == "bulk_timeout_ms" && parse_u64(value, u)) {
            bulk_timeout_ms = u;
        } else if (key == "record_kcall_trace" && parse_bool(value, b)) {
            record_kcall_trace = b;
        } else if (key == "default_mode") {
            if (value != "shared" && value != "one_to_one" && value != "standalone") {
                return key;
            }
            default_mode = value;
        } else if (key == "scratch_root") {
            scratch_root = value;
        } else {
            return key;  // unknown or unparsable
        }
    }
    return std::nullopt;
}

std::optional<std::string> PlaneConfig::apply_env() {
    util::IniMap overrides;
    for (const auto& [key, value] : to_map()) {
        std::string env_key = "MKSV_" + key;
        for (auto& c : env_key) c = static_cast<char>(::toupper(c));
        const char* env = std::getenv(env_key.c_str());
        if (env != nullptr) overrides[key] = env;
    }
    return apply(overrides);
}

util::IniMap PlaneConfig::to_map() const {
    util::IniMap m;
    m["namespace_pool_size"] = std::to_string(namespace_pool_size);
    m["service_pool_size"] = std::to_string(service_pool_size);
    m["pool_low_water"] = std::to_string(pool_low_water);
    m["refill_enabled"] = refill_enabled ? "true" : "false";
    m["keepalive_ms"] = std::to_string(keepalive_ms);
    m["invoke_timeout_ms"] = std::to_string(invoke_timeout_ms);
    m["worker_cap"] = std::to_string(worker_cap);
    m["service_snapshot_bytes"] = std::to_string(service_snapshot_bytes);
    m["transport_buffer_bytes"] = std::to_string(transport_buffer_bytes);
    m["record_exec_trace"] = record_exec_trace ? "true" : "false";
    m["uvm_image_bytes"] = std::to_string(uvm_image_bytes);
    m["strict_page_mode"] = strict_page_mode ? "true" : "false";
    m["bulk_timeout_ms"] = std::to_string(bulk_timeout_ms);
    m["record_kcall_trace"] = record_kcall_trace ? "true" : "false";
    m["default_mode"] = default_mode;
    m["scratch_root"] = scratch_root.string();
    return m;
}

std::filesystem::path PlaneConfig::effective_scratch_root() const {
    if (!scratch_root.empty()) return scratch_root;
    return std::filesystem::temp_directory_path() /
           ("mksv_" + std::to_string(::getpid()));
}

}  // namespace mksv::ctrl
