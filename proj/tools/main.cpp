#include <iostream>
#include <string>
#include <vector>

#include "psidrr/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  return psidrr::cli::run(args, std::cout, std::cerr);
}
