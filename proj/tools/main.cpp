#include <iostream>

#include "getam/cli.hpp"

int main(int argc, char** argv) {
  return getam::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
