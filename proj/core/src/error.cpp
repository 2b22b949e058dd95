#include "atnlab/error.hpp"

namespace atnlab {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "invalid argument";
        case ErrorCode::ShapeMismatch: return "shape mismatch";
        case ErrorCode::UnknownArchitecture: return "unknown architecture";
        case ErrorCode::CorruptHeader: return "corrupt header";
        case ErrorCode::VersionMismatch: return "version mismatch";
        case ErrorCode::TruncatedData: return "truncated data";
        case ErrorCode::ArchMismatch: return "arch mismatch";
        case ErrorCode::WrongMagic: return "wrong magic";
        case ErrorCode::CountMismatch: return "count mismatch";
        case ErrorCode::BudgetViolation: return "budget violation";
        case ErrorCode::MissingFilter: return "missing filter";
        case ErrorCode::NonFiniteLoss: return "non-finite loss";
        case ErrorCode::Io: return "i/o error";
    }
    return "unknown error";
}

}  // namespace atnlab
