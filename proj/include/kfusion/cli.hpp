#pragma once

// Command-line front end: analyze | verify | random | suite | dual.
//
// Exit codes: 0 pass, 1 check failure, 2 parse/validation/usage error,
// 3 precondition violation.

#include <iosfwd>
#include <string>
#include <vector>

#include "kfusion/numerics.hpp"

namespace kfusion {

enum ExitCode : int { kExitPass = 0, kExitFail = 1, kExitUsage = 2, kExitPrecondition = 3 };

/// Environment variable overriding the default residual tolerance.
inline constexpr const char* kTolEnv = "KFUSION_TOL_RESIDUAL";

/// Names accepted by `verify --check`, in execution order for `all`.
const std::vector<std::string>& check_names();

/// Effective tolerances: defaults, then the environment variable, then the
/// instance file, then the command-line flag. Throws ValidationError on a
/// malformed environment value.
Tolerances resolve_tolerances(const Tolerances* from_file, const double* from_flag);

/// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace kfusion
