#pragma once

#include <map>
#include <string>
#include <vector>

#include "mksv/ikc/call_id.hpp"
#include "mksv/ikc/marshal.hpp"

namespace mksv::svc {

enum class Verdict : uint8_t { Allow, Deny };

/// Kernel-call filter applied before any backend work. Evaluation is pure:
/// the same (policy, call, op) always yields the same verdict.
///
/// Precedence: per-call rules, then per-op rules, then the open() path
/// allow-list (when set, open paths must match a prefix), then the default.
struct FilterPolicy {
    Verdict default_verdict = Verdict::Allow;
    std::map<ikc::CallId, Verdict> call_rules;
    std::map<ikc::OpTag, Verdict> op_rules;
    std::vector<std::string> open_path_prefixes;

    Verdict evaluate(ikc::CallId call, const ikc::MarshaledOp* op) const;

    static FilterPolicy allow_all();
    static FilterPolicy deny_all();
};

}  // namespace mksv::svc
