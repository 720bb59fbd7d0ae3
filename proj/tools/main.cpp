#include <iostream>

#include "cfx/cli.hpp"

int main(int argc, char** argv) { return cfx::cli::run(argc, argv, std::cout, std::cerr); }
