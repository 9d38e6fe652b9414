#include <iostream>
#include <vector>

#include "trsc/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return trsc::run_cli(args, std::cout, std::cerr);
}
