#include <iostream>
#include <string>
#include <vector>

#include "sbthermo/cli.hpp"

int main(int argc, char** argv) {
  return sbthermo::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
