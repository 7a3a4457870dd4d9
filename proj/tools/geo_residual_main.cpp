#include <iostream>

#include "georesidual/cli.hpp"

int main(int argc, char** argv) { return georesidual::cli::run(argc, argv, std::cout, std::cerr); }
