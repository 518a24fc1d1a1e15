#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return rae::cli_main(argc, argv, std::cout, std::cerr); }
