#include <iostream>
#include <string>
#include <vector>

#include "mtplab/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mtplab::run_cli(args, std::cout, std::cerr);
}
