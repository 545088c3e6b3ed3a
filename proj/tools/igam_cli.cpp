#include <vector>

#include "igam/cli.hpp"

int main(int argc, char** argv) {
  return igam::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
