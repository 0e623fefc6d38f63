#include <iostream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "cascade/cli.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training reallocates the same large activation buffers every step; keep
  // freed memory in the heap instead of returning it to the kernel.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return cascade::cli::run(argc, argv, std::cout, std::cerr);
}
