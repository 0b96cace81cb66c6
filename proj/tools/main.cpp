#include <string>
#include <vector>

#include "pmpguard/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pmpguard::cli::cli_dispatch(args);
}
