#include <iostream>
#include <string>
#include <vector>

#include "fairgw/cli.hpp"

int main(int argc, char** argv) {
  // Must precede thread creation.
  fairgw::cli::block_signals();
  std::vector<std::string> args(argv + 1, argv + argc);
  return fairgw::cli::run(std::move(args), std::cout, std::cerr);
}
