#pragma once

#include <stdexcept>
#include <string>

namespace raps {

/// Failure categories. Each maps onto one CLI exit code.
enum class Errc {
    usage,            // bad configuration or arguments
    span_out_of_range,
    dim_mismatch,
    malformed_input,
    duplicate_key,
    missing_key,
    insufficient_data,
    io,
    non_finite,
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

/// 0 success, 1 usage error, 2 data error, 3 numeric failure.
inline int exit_code(Errc code) {
    switch (code) {
    case Errc::usage:
        return 1;
    case Errc::non_finite:
        return 3;
    default:
        return 2;
    }
}

inline const char* to_string(Errc code) {
    switch (code) {
    case Errc::usage: return "usage";
    case Errc::span_out_of_range: return "span_out_of_range";
    case Errc::dim_mismatch: return "dim_mismatch";
    case Errc::malformed_input: return "malformed_input";
    case Errc::duplicate_key: return "duplicate_key";
    case Errc::missing_key: return "missing_key";
    case Errc::insufficient_data: return "insufficient_data";
    case Errc::io: return "io";
    case Errc::non_finite: return "non_finite";
    }
    return "unknown";
}

}  // namespace raps
