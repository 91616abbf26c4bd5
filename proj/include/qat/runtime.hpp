#pragma once

// Process-level settings for the executables.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace qat {

// Ops allocate and free multi-megabyte buffers every step. glibc's adaptive
// mmap threshold can leave those on the mmap path, so each one is returned to
// the OS and page-faulted back in (seen as ~1.5 s of sys time per 60
// cnn_small steps, and as run-to-run timing skew that depends on unrelated
// allocations). Keep them on the heap instead.
inline void tune_allocator() {
#if defined(__GLIBC__)
  constexpr int kBytes = 1 << 30;
  mallopt(M_MMAP_THRESHOLD, kBytes);
  mallopt(M_TRIM_THRESHOLD, kBytes);
#endif
}

}  // namespace qat
