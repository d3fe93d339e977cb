#include <iostream>
#include <string>
#include <vector>

#include "easynlp/appzoo.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return easynlp::run_cli(args, std::cout, std::cerr);
}
