#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace spotkit::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfig = 2,
    kIo = 3,
    kDivergence = 4,
    kCheckpoint = 5,
    kSchema = 6,
};

// Runs `spotkit <command> ...`; args excludes the program name. Output and
// diagnostics go to the given streams so the commands can run in-process.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace spotkit::cli
