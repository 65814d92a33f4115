#include "mksv/ukernel/programs.hpp"

#include <cstring>

#include "mksv/ukernel/posix_shim.hpp"
#include "mksv/ukernel/user_vm.hpp"

namespace mksv::uk {

namespace {

int error_exit(ErrorCode code) {
    return kExitKcallErrorBase + static_cast<int>(code);
}

uint64_t argv_u64(const Manifest& manifest, size_t index, uint64_t fallback) {
    if (index >= manifest.argv.size()) return fallback;
    try {
        return std::stoull(manifest.argv[index]);
    } catch (...) {
        return fallback;
    }
}

int echo_stream(PosixIo& io) {
    std::vector<std::byte> buf(4096);
    for (;;) {
        auto n = io.read(0, buf);
        if (!n.ok()) return error_exit(n.error());
        if (n.value() == 0) return 0;
        size_t off = 0;
        while (off < n.value()) {
            auto w = io.write(1, std::span(buf.data() + off, n.value() - off));
            if (!w.ok()) return error_exit(w.error());
            off += w.value();
        }
    }
}

// Length-prefix framed echo for Pull stdio: 4-byte little-endian length,
// then the payload. Large payloads ride the bulk path in both directions.
int echo_framed(PosixIo& io) {
    for (;;) {
        std::array<std::byte, 4> prefix;
        auto p = io.read_exact(0, prefix);
        if (!p.ok()) return error_exit(p.error());
        if (p.value() == 0) return 0;  // clean EOF between frames
        uint32_t len = 0;
        for (int i = 3; i >= 0; --i) len = (len << 8) | std::to_integer<uint32_t>(prefix[i]);
        std::vector<std::byte> payload(len);
        if (len > 0) {
            auto body = io.read_exact(0, payload);
            if (!body.ok()) return error_exit(body.error());
            if (body.value() == 0) return error_exit(ErrorCode::BadFrame);
        }
        auto w1 = io.write(1, prefix);
        if (!w1.ok()) return error_exit(w1.error());
        if (len > 0) {
            size_t off = 0;
            while (off < payload.size()) {
                auto w = io.write(1, std::span(payload.data() + off, payload.size() - off));
                if (!w.ok()) return error_exit(w.error());
                off += w.value();
            }
        }
    }
}

int echo_main(GuestApi&, PosixIo& io, const Manifest& manifest) {
    return manifest.stdio == StdioMode::Pull ? echo_framed(io) : echo_stream(io);
}

int noop_main(GuestApi&, PosixIo&, const Manifest&) {
    return 0;
}

int sleep_main(GuestApi&, PosixIo& io, const Manifest& manifest) {
    uint64_t ms = argv_u64(manifest, 0, 10);
    auto r = io.nanosleep_ns(ms * 1'000'000ull);
    return r.ok() ? 0 : error_exit(r.error());
}

int io_heavy_main(GuestApi&, PosixIo& io, const Manifest& manifest) {
    uint64_t bytes = argv_u64(manifest, 0, 4096);
    uint64_t files = argv_u64(manifest, 1, 4);

    std::vector<std::byte> pattern(bytes);
    for (size_t i = 0; i < pattern.size(); ++i) {
        pattern[i] = static_cast<std::byte>((i * 131 + 7) & 0xFF);
    }
    std::vector<std::byte> back(bytes);

    for (uint64_t i = 0; i < files; ++i) {
        std::string path = "f" + std::to_string(i);
        auto fd = io.open(path, ikc::kOpenWrite | ikc::kOpenCreate | ikc::kOpenTrunc);
        if (!fd.ok()) return error_exit(fd.error());
        size_t off = 0;
        while (off < pattern.size()) {
            auto w = io.write(fd.value(), std::span(pattern.data() + off, bytes - off));
            if (!w.ok()) return error_exit(w.error());
            off += w.value();
        }
        if (auto c = io.close(fd.value()); !c.ok()) return error_exit(c.error());

        auto rd = io.open(path, ikc::kOpenRead);
        if (!rd.ok()) return error_exit(rd.error());
        auto n = io.read_exact(rd.value(), back);
        if (!n.ok()) return error_exit(n.error());
        if (auto c = io.close(rd.value()); !c.ok()) return error_exit(c.error());
        if (back != pattern) return 65;
    }
    return 0;
}

int local_burst_main(GuestApi& api, PosixIo&, const Manifest& manifest) {
    uint64_t iterations = argv_u64(manifest, 0, 10000);
    uint64_t done = 0;
    while (done < iterations) {
        switch (done % 8) {
            case 0: api.gettid(); break;
            case 1: {
                auto base = api.mmap(8192);
                if (!base.ok()) return error_exit(base.error());
                if (auto r = api.mcopy(base.value() + 4096, base.value(), 4096); !r.ok()) {
                    return error_exit(r.error());
                }
                if (auto r = api.munmap(base.value(), 8192); !r.ok()) {
                    return error_exit(r.error());
                }
                break;
            }
            case 2: api.mutex_lock(1); api.mutex_unlock(1); break;
            case 3: api.set_tls(done); break;
            case 4: api.gettime_ns(); break;
            case 5: api.yield(); break;
            case 6: api.capctl(1, done); break;
            case 7: api.get_tls(); break;
        }
        ++done;
    }
    return 0;
}

}  // namespace

const ProgramRegistry& ProgramRegistry::builtin() {
    static const ProgramRegistry registry = [] {
        ProgramRegistry r;
        r.add("echo", echo_main);
        r.add("noop", noop_main);
        r.add("sleep", sleep_main);
        r.add("io-heavy", io_heavy_main);
        r.add("local-burst", local_burst_main);
        return r;
    }();
    return registry;
}

void ProgramRegistry::add(const std::string& name, ProgramMain main) {
    programs_[name] = std::move(main);
}

const ProgramMain* ProgramRegistry::find(const std::string& name) const {
    auto it = programs_.find(name);
    return it == programs_.end() ? nullptr : &it->second;
}

}  // namespace mksv::uk
