#include <iostream>

#include "epiforecast/cli.h"

int main(int argc, char** argv) { return epi::run_cli(argc, argv, std::cout, std::cerr); }
