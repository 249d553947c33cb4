#include <iostream>
#include <string>
#include <vector>

#include "dialnav/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dialnav::run_cli(args, std::cout, std::cerr);
}
