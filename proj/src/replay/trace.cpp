#include "mksv/replay/trace.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace mksv::replay {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out) {
    try {
        size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

}  // namespace

TraceResult<std::vector<TraceRecord>> load_trace(std::istream& in) {
    std::string line;
    size_t lineno = 0;
    if (!std::getline(in, line)) {
        return TraceError{0, "empty trace"};
    }
    ++lineno;
    auto header = split_csv(trim(line));
    bool has_service_time = false;
    if (header.size() == 4 && trim(header[3]) == "service_time_ms") {
        has_service_time = true;
    } else if (header.size() != 3) {
        return TraceError{lineno, "expected header arrival_ms,tenant_id,function_id"
                                  "[,service_time_ms]"};
    }
    if (trim(header[0]) != "arrival_ms" || trim(header[1]) != "tenant_id" ||
        trim(header[2]) != "function_id") {
        return TraceError{lineno, "expected header arrival_ms,tenant_id,function_id"
                                  "[,service_time_ms]"};
    }

    std::vector<TraceRecord> records;
    while (std::getline(in, line)) {
        ++lineno;
        std::string trimmed = trim(line);
        if (trimmed.empty()) continue;
        auto fields = split_csv(trimmed);
        if (fields.size() != (has_service_time ? 4u : 3u)) {
            return TraceError{lineno, "wrong field count"};
        }
        TraceRecord rec;
        if (!parse_double(trim(fields[0]), rec.arrival_ms) || rec.arrival_ms < 0) {
            return TraceError{lineno, "bad arrival_ms"};
        }
        rec.tenant_id = trim(fields[1]);
        if (rec.tenant_id.empty()) {
            return TraceError{lineno, "empty tenant_id"};
        }
        rec.function_id = trim(fields[2]);
        if (has_service_time) {
            std::string st = trim(fields[3]);
            if (!st.empty()) {
                double value = 0;
                if (!parse_double(st, value) || value < 0) {
                    return TraceError{lineno, "bad service_time_ms"};
                }
                rec.service_time_ms = value;
            }
        }
        records.push_back(std::move(rec));
    }
    if (records.empty()) {
        return TraceError{lineno, "empty trace"};
    }
    std::stable_sort(records.begin(), records.end(),
                     [](const TraceRecord& a, const TraceRecord& b) {
                         return a.arrival_ms < b.arrival_ms;
                     });
    return records;
}

TraceResult<std::vector<TraceRecord>> load_trace_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        return TraceError{0, "cannot open " + path};
    }
    return load_trace(in);
}

std::vector<TraceRecord> decimate(const std::vector<TraceRecord>& records, uint32_t factor) {
    if (factor <= 1) return records;
    std::vector<TraceRecord> kept;
    kept.reserve(records.size() / factor + 1);
    for (size_t i = 0; i < records.size(); i += factor) kept.push_back(records[i]);
    return kept;
}

}  // namespace mksv::replay
