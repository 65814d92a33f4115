#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "mksv/util/ini.hpp"

namespace mksv::ctrl {

/// Control-plane configuration. Every key can come from a key=value config
/// file, be overridden by an MKSV_-prefixed environment variable, and be
/// overridden again by a CLI flag (flags > env > file > defaults).
struct PlaneConfig {
    // pools & lifecycle
    size_t namespace_pool_size = 64;
    size_t service_pool_size = 8;
    size_t pool_low_water = 2;
    bool refill_enabled = true;
    uint64_t keepalive_ms = 60'000;
    uint64_t invoke_timeout_ms = 30'000;

    // service shape
    size_t worker_cap = 256;
    uint64_t service_snapshot_bytes = 4ull << 20;
    size_t transport_buffer_bytes = 256 * 1024;
    bool record_exec_trace = false;

    // user VM shape
    uint64_t uvm_image_bytes = 16ull << 20;
    bool strict_page_mode = false;
    uint64_t bulk_timeout_ms = 5'000;
    bool record_kcall_trace = false;

    std::string default_mode = "shared";
    std::filesystem::path scratch_root;  // empty -> per-process temp dir

    /// Applies recognized keys from a parsed key=value map. Returns the
    /// offending key on errors.
    std::optional<std::string> apply(const util::IniMap& values);
    /// Applies MKSV_<KEY> environment overrides.
    std::optional<std::string> apply_env();

    util::IniMap to_map() const;
    std::filesystem::path effective_scratch_root() const;
};

}  // namespace mksv::ctrl
