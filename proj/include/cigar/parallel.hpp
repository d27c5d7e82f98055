#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace cigar {

// Worker count: CIGAR_THREADS env var if set, else hardware concurrency.
unsigned thread_count();

// Runs fn over [0, n) split into contiguous chunks, one per worker. Callers
// must write results into per-index slots and reduce sequentially afterwards
// so that the outcome does not depend on the number of threads.
void parallel_for(size_t n, const std::function<void(size_t begin, size_t end)>& fn);

}  // namespace cigar
