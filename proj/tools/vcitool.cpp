#include <iostream>

#include "vci/cli.hpp"

int main(int argc, char** argv) { return vci::run_cli(argc, argv, std::cout, std::cerr); }
