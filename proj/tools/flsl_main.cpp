#include <iostream>

#include "flsl/cli.hpp"

int main(int argc, char** argv) { return flsl::run_cli(argc, argv, std::cout, std::cerr); }
