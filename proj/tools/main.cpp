#include <iostream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "cli.hpp"

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // Activation buffers are allocated and freed every step; keep them on the
    // heap instead of round-tripping through mmap/munmap.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    return mtsnet::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
