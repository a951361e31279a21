#include <iostream>

#include "mfbd/cli.hpp"

int main(int argc, char** argv) { return mfbd::cli::run(argc, argv, std::cout, std::cerr); }
