#include <iostream>

#include "nora/cli.hpp"

int main(int argc, char** argv) { return nora::cli::run(argc, argv, std::cout, std::cerr); }
