#include <iostream>
#include <string>
#include <vector>

#include "panel_dml/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return panel_dml::run_cli(args, std::cout, std::cerr);
}
