#pragma once

#include <functional>
#include <map>
#include <string>

#include "mksv/ukernel/guest_context.hpp"

namespace mksv::uk {

struct Manifest;
class PosixIo;

/// Guest programs are native callbacks selected by manifest entry name.
/// Convention for exit codes: 0 success, 64 + ErrorCode for kernel-call
/// failures surfaced by a program, 65 data mismatch.
using ProgramMain = std::function<int(GuestApi&, PosixIo&, const Manifest&)>;

inline constexpr int kExitKcallErrorBase = 64;

class ProgramRegistry {
  public:
    /// echo       - copies stdin to stdout (framed in Pull stdio mode)
    /// noop       - exits immediately
    /// sleep      - sleeps argv[0] milliseconds (default 10)
    /// io-heavy   - file write/read-back churn via the service backend
    /// local-burst- argv[0] iterations of local-only kernel calls
    static const ProgramRegistry& builtin();

    void add(const std::string& name, ProgramMain main);
    const ProgramMain* find(const std::string& name) const;

  private:
    std::map<std::string, ProgramMain> programs_;
};

}  // namespace mksv::uk
