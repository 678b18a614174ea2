#include <iostream>

#include "mmet/cli.hpp"

int main(int argc, char** argv) {
  return mmet::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
