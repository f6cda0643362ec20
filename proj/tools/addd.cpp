#include <iostream>

#include "addd/cli.hpp"

int main(int argc, char** argv) { return addd::run_cli(argc, argv, std::cout, std::cerr); }
