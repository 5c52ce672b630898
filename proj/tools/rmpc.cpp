#include "rmpc/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return rmpc::run_cli(argc, argv, std::cout, std::cerr); }
