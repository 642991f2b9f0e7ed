#include <iostream>

#include "rrnn/cli.hpp"

int main(int argc, char** argv) { return rrnn::cli::run(argc, argv, std::cout, std::cerr); }
