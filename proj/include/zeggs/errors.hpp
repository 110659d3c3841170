#pragma once

#include <stdexcept>
#include <string>

namespace zeggs {

// Error categories. The CLI maps these to its machine-parsable
// "E_<CODE>:" prefix, so keep the names short and stable.
enum class Errc {
    io,       // file missing / unreadable / short read
    format,   // malformed input (BVH, WAV, cache, checkpoint, CSV)
    shape,    // tensor / dimension mismatch
    config,   // bad configuration value or unknown field
    args,     // bad CLI arguments or spec strings
    state,    // operation invalid in current state
    numeric,  // non-finite values, degenerate geometry
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& msg)
        : std::runtime_error(msg), code_(code) {}
    Errc code() const { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) {
    throw Error(code, msg);
}

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::io: return "IO";
        case Errc::format: return "FORMAT";
        case Errc::shape: return "SHAPE";
        case Errc::config: return "CONFIG";
        case Errc::args: return "ARGS";
        case Errc::state: return "STATE";
        case Errc::numeric: return "NUMERIC";
    }
    return "UNKNOWN";
}

}  // namespace zeggs
