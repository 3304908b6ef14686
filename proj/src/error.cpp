#include "medfuse/error.hpp"

namespace medfuse {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::TooFewRows: return "TooFewRows";
        case ErrorKind::MissingIntercept: return "MissingIntercept";
        case ErrorKind::RankDeficient: return "RankDeficient";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::ZeroExposureVariance: return "ZeroExposureVariance";
        case ErrorKind::NoConvergence: return "NoConvergence";
        case ErrorKind::SingularSigmaM: return "SingularSigmaM";
        case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::SchemaMismatch: return "SchemaMismatch";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

}  // namespace medfuse
