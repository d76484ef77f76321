#include "app.hpp"

#include <iostream>

int main(int argc, char** argv) { return bridgekit::cli::main_entry(argc, argv, std::cout, std::cerr); }
