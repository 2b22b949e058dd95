#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace atnlab {

enum class ErrorCode {
    InvalidArgument,
    ShapeMismatch,
    UnknownArchitecture,
    CorruptHeader,
    VersionMismatch,
    TruncatedData,
    ArchMismatch,
    WrongMagic,
    CountMismatch,
    BudgetViolation,
    MissingFilter,
    NonFiniteLoss,
    Io,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a machine-readable code so the
// CLI can map it onto an exit status.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) {
        fail(code, message);
    }
}

}  // namespace atnlab
