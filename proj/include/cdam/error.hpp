#pragma once

#include <stdexcept>
#include <string>

namespace cdam {

// Error categories. Each maps onto a stable CLI exit code via exit_code().
enum class Errc {
    usage,           // flag misuse / incoherent options
    invalid_argument,
    io,              // file missing, unreadable, unwritable
    parse,           // malformed CSV / JSON / PNG content
    validation,      // parsed content violates an invariant (e.g. index out of range)
    bad_magic,
    bad_header,      // weight-file header unreadable or inconsistent
    truncated,
    missing_tensor,
    shape_mismatch,
    invalid_config,
    no_head,         // class-based op on a headless model
    numeric,         // NaN / Inf produced or consumed
};

const char* errc_name(Errc code) noexcept;

// 2 usage, 3 I/O and file content, 4 model/shape, 5 numeric.
int exit_code(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace cdam
