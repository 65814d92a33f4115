#pragma once

#include <map>
#include <optional>
#include <string>

namespace mksv::util {

/// key=value config file parser. '#' and ';' start comments, blank lines
/// are skipped, whitespace around keys and values is trimmed. Returns an
/// error message naming the offending line on malformed input.
struct IniParseError {
    size_t line = 0;
    std::string message;
};

using IniMap = std::map<std::string, std::string>;

std::optional<IniParseError> parse_ini(const std::string& text, IniMap& out);
std::optional<IniParseError> parse_ini_file(const std::string& path, IniMap& out);

}  // namespace mksv::util
