#include <iostream>
#include <string>
#include <vector>

#include "spikingformer_cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return spkf::cli::run(args, std::cout, std::cerr);
}
