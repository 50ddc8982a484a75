#include <iostream>

#include "kdiffe/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return kdiffe::run_cli(args, std::cout, std::cerr);
}
