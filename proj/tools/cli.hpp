#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ctg::cli {

/// Runs one subcommand. `args` excludes the program name. Returns the exit
/// status: 0 on success, 1 when a module reports an error, 2 on usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctg::cli
