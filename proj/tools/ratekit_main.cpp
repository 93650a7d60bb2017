#include <iostream>

#include "ratekit/cli.hpp"

int main(int argc, char** argv) { return ratekit::run_cli(argc, argv, std::cout, std::cerr); }
