#include <iostream>

#include "regionedit/cli.hpp"

int main(int argc, char** argv) { return regionedit::cli::run(argc, argv, std::cout, std::cerr); }
