#include "bend/cli/commands.hpp"

#include <iostream>

int main(int argc, char** argv) { return bend::cli::run_cli(argc, argv, std::cout, std::cerr); }
