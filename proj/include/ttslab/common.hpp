#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ttslab {

using i64 = std::int64_t;
using u64 = std::uint64_t;

// Token ids live in one extended id space (see vocab.hpp). Lane codes are
// lane-local small integers with per-lane special values appended after the
// real code range.
using TokenId = std::int64_t;
using LaneCode = std::int32_t;

// Machine-parseable error categories; the CLI maps these to exit diagnostics.
enum class errc {
    shape,      // matrix / tensor dimension mismatch
    config,     // invalid configuration value
    range,      // id / lane / code out of range
    contract,   // API contract violation (stale tape, out-of-order decode)
    truncated,  // generation hit its step budget before EOS
    io,         // file read/write failure
    version,    // unsupported serialized format version
    training    // non-finite loss or diverged run
};

inline std::string_view errc_name(errc c) {
    switch (c) {
        case errc::shape: return "shape";
        case errc::config: return "config";
        case errc::range: return "range";
        case errc::contract: return "contract";
        case errc::truncated: return "truncated";
        case errc::io: return "io";
        case errc::version: return "version";
        case errc::training: return "training";
    }
    return "unknown";
}

class error : public std::runtime_error {
public:
    error(errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    errc code() const noexcept { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) { throw error(code, msg); }

}  // namespace ttslab
