#pragma once

#include <string>

#include "mksv/ikc/frame.hpp"

namespace mksv::ikc {

/// One JSON line per frame: raw hex plus the decoded fields, e.g.
/// {"hex":"564e0100...","kind":"call_request","call":"send",...}
std::string frame_dump_line(std::span<const std::byte> raw, const IkcFrame& frame);

/// Decodes a hex-encoded frame into a dump line; invalid input yields a
/// line with an "error" field instead of decoded fields.
std::string dump_hex_input(const std::string& hex_line);

/// Routes every frame on subsequently created channels to the given file
/// ("-" for stderr). Empty path disables dumping.
void enable_frame_dump(const std::string& path);

}  // namespace mksv::ikc
