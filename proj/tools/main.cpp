#include <string>
#include <vector>

#include "gfssm/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return gfssm::run_cli(std::move(args));
}
