#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace medfuse {

enum class ErrorKind {
    DimensionMismatch,
    TooFewRows,
    MissingIntercept,
    RankDeficient,
    NonFinite,
    ZeroExposureVariance,
    NoConvergence,
    SingularSigmaM,
    NotPositiveDefinite,
    InvalidArgument,
    ParseError,
    ConfigError,
    SchemaMismatch,
    IoError,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; callers switch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Iterative fit stopped at its cap. `replicate` is set when the failure
// happened inside a bootstrap or simulation replicate.
class NoConvergenceError : public Error {
public:
    NoConvergenceError(const std::string& what, int iterations, double last_delta, long replicate = -1)
        : Error(ErrorKind::NoConvergence,
                what + " (iterations=" + std::to_string(iterations) +
                    ", last_delta=" + std::to_string(last_delta) +
                    (replicate >= 0 ? ", replicate=" + std::to_string(replicate) : std::string()) + ")"),
          iterations_(iterations),
          last_delta_(last_delta),
          replicate_(replicate) {}

    int iterations() const noexcept { return iterations_; }
    double last_delta() const noexcept { return last_delta_; }
    long replicate() const noexcept { return replicate_; }

private:
    int iterations_;
    double last_delta_;
    long replicate_;
};

}  // namespace medfuse
