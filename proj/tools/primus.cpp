#include <iostream>
#include <string>
#include <vector>

#include "primus/cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return primus::run_cli(args, std::cout, std::cerr);
}
