#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace multisem::cli {

enum ExitCode : int {
    ok = 0,
    input_error = 1,
    verification_failure = 2,
};

/// Runs one `multisem` subcommand (train, eval, predict, gradcheck).
/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace multisem::cli
