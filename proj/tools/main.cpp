#include <iostream>

#include "ote_cli.hpp"

int main(int argc, char** argv) { return ote::cli::run(argc, argv, std::cout, std::cerr); }
