#include <fedbatch/cli/commands.hpp>

#include <iostream>

int main(int argc, char** argv) { return fedbatch::cli::main_entry(argc, argv, std::cout, std::cerr); }
