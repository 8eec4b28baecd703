#include <iostream>

#include "retain/cli.hpp"

int main(int argc, char** argv) { return retain::run_cli(argc, argv, std::cout, std::cerr); }
