#pragma once

#include "mksv/ctrl/control_plane.hpp"
#include "mksv/replay/driver.hpp"

namespace mksv::ctrl {

/// Replays trace records as control-plane invocations: same function for
/// every request, tenant taken from the record, payload fed inline through
/// the gateway.
class PlaneInvocationTarget : public replay::InvocationTarget {
  public:
    PlaneInvocationTarget(ControlPlane& plane, DeployMode mode, std::string function,
                          std::vector<std::byte> payload)
        : plane_(plane), mode_(mode), function_(std::move(function)),
          payload_(std::move(payload)) {}

    Result<void> invoke(const replay::TraceRecord& record) override {
        InvocationRequest request;
        request.tenant_id = record.tenant_id;
        request.function = function_;
        request.mode = mode_;
        request.inline_payload = payload_;
        auto result = plane_.invoke(request);
        if (!result.ok()) return result.error();
        if (result.value().error != 0) {
            return static_cast<ErrorCode>(result.value().error);
        }
        return {};
    }

  private:
    ControlPlane& plane_;
    DeployMode mode_;
    std::string function_;
    std::vector<std::byte> payload_;
};

}  // namespace mksv::ctrl
