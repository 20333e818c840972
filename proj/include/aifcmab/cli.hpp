#pragma once

// placeholder; full CLI added with the simulation harness
#include <cstdio>

namespace aifcmab::cli {
inline int run(int, char**) {
    std::puts("aifcmab: not yet wired");
    return 2;
}
}  // namespace aifcmab::cli
