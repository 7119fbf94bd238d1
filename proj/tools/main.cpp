#include <iostream>

#include "gestalt/cli.hpp"

int main(int argc, char** argv) { return gestalt::run_cli(argc, argv, std::cout, std::cerr); }
