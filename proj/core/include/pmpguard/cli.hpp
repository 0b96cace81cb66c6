#pragma once

#include <string>
#include <vector>

namespace pmpguard::cli {

// Runs one subcommand. Returns 0 on success, 1 on usage errors, 2 on
// runtime errors. `args` excludes the program name.
int cli_dispatch(const std::vector<std::string>& args);

}  // namespace pmpguard::cli
