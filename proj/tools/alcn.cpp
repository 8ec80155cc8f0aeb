#include <iostream>

#include "alcn/cli.hpp"

int main(int argc, char** argv) { return alcn::cli::run(argc, argv, std::cout, std::cerr); }
