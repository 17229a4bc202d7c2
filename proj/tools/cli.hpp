#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mtsnet::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kData = 3,
    kCheckpoint = 4,
};

/// Runs one subcommand. `args` excludes the program name. Results go to
/// `out`, progress and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mtsnet::cli
