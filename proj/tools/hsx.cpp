#include <iostream>

#include "hs/cli.hpp"

int main(int argc, char** argv) { return hs::run_cli(argc, argv, std::cout, std::cerr); }
