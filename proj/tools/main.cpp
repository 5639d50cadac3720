#include <iostream>
#include <string>
#include <vector>

#include "stemvq/cli.hpp"

int main(int argc, char** argv) {
  stemvq::tune_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return stemvq::run(args, std::cout, std::cerr);
}
