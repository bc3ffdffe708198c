#include <iostream>

#include "dlm/cli.hpp"

int main(int argc, char** argv) { return dlm::cli::dispatch(argc, argv, std::cout, std::cerr); }
