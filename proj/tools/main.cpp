#include <cstdio>

#include "chunkgen/common.hpp"

int main(int, char**) {
    std::fprintf(stderr, "chunkgen: no subcommands wired yet\n");
    return 1;
}
