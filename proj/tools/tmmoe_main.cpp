#include <iostream>

#include "tmmoe/cli.hpp"

int main(int argc, char** argv) {
  return tmmoe::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
