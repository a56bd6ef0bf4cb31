#pragma once

// Process-level allocator tuning for long training runs. Results do not depend on it.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace catnet::runtime {

/// Keeps large per-step buffers on the heap instead of mmap/munmap every step.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace catnet::runtime
