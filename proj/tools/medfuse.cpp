#include "medfuse/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return medfuse::run_cli(argc, argv, std::cout, std::cerr); }
