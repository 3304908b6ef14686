#pragma once

// `medfuse` command line: fit, simulate, report. Exit codes: 0 success,
// 2 validation or usage error, 3 convergence failure, 4 I/O failure.

#include "medfuse/error.hpp"

#include <iosfwd>

namespace medfuse {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitConvergence = 3;
inline constexpr int kExitIo = 4;

int exit_code(ErrorKind kind);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace medfuse
