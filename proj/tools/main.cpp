#include <iostream>

#include "spmoe/cli.hpp"

int main(int argc, char** argv) { return spmoe::RunCli(argc, argv, std::cin, std::cout, std::cerr); }
