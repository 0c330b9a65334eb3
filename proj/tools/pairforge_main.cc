#include <iostream>
#include <string>
#include <vector>

#include "pairforge/cli.h"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return pairforge::Dispatch(args, std::cout, std::cerr);
}
