#include "gelae/cli.h"

int main(int argc, char** argv) {
  return gelae::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
