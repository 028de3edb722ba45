#include <iostream>

#include "poiformer/cli.hpp"

int main(int argc, char** argv) {
    poiformer::tune_allocator();
    return poiformer::run_cli(argc, argv, std::cout, std::cerr);
}
