#include <iostream>

#include "ocdmlc/cli.hpp"

int main(int argc, char** argv) { return ocdmlc::run_cli(argc, argv, std::cout, std::cerr); }
