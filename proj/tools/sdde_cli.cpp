#include "sdde/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return sdde::cli_dispatch(argc, argv, std::cout, std::cerr); }
