#include <iostream>
#include <string>
#include <vector>

#include "omnibot/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return omnibot::cli::main(args, std::cout, std::cerr);
}
