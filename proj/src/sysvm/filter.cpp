#include "mksv/sysvm/filter.hpp"

namespace mksv::svc {

Verdict FilterPolicy::evaluate(ikc::CallId call, const ikc::MarshaledOp* op) const {
    auto call_rule = call_rules.find(call);
    if (call_rule != call_rules.end()) return call_rule->second;
    if (op != nullptr) {
        auto op_rule = op_rules.find(op->tag);
        if (op_rule != op_rules.end()) return op_rule->second;
        if (op->tag == ikc::OpTag::Open && !open_path_prefixes.empty()) {
            for (const auto& prefix : open_path_prefixes) {
                if (op->path.rfind(prefix, 0) == 0) return Verdict::Allow;
            }
            return Verdict::Deny;
        }
    }
    return default_verdict;
}

FilterPolicy FilterPolicy::allow_all() {
    return FilterPolicy{};
}

FilterPolicy FilterPolicy::deny_all() {
    FilterPolicy policy;
    policy.default_verdict = Verdict::Deny;
    return policy;
}

}  // namespace mksv::svc
