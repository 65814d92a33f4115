#include "mksv/util/ini.hpp"

#include <fstream>
#include <sstream>

namespace mksv::util {

namespace {

std::string trim(const std::string& s) {
    size_t begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    size_t end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

std::optional<IniParseError> parse_ini(const std::string& text, IniMap& out) {
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line.erase(comment);
        std::string trimmed = trim(line);
        if (trimmed.empty()) continue;
        auto eq = trimmed.find('=');
        if (eq == std::string::npos) {
            return IniParseError{lineno, "expected key=value"};
        }
        std::string key = trim(trimmed.substr(0, eq));
        std::string value = trim(trimmed.substr(eq + 1));
        if (key.empty()) {
            return IniParseError{lineno, "empty key"};
        }
        out[key] = value;
    }
    return std::nullopt;
}

std::optional<IniParseError> parse_ini_file(const std::string& path, IniMap& out) {
    std::ifstream f(path);
    if (!f) {
        return IniParseError{0, "cannot open " + path};
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_ini(ss.str(), out);
}

}  // namespace mksv::util
