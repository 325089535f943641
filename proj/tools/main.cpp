#include <iostream>

#include "sdtn/cli.hpp"

int main(int argc, char** argv) {
    return sdtn::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
