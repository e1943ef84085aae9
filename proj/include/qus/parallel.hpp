#pragma once

#include <cstddef>
#include <functional>

namespace qus {

// Number of workers: hardware concurrency, capped by the QUS_THREADS
// environment variable when set. Always at least 1.
int worker_count();

// Runs fn(i) for every i in [0, n). Indices are split into contiguous chunks
// across workers; each index is processed exactly once. Callers must only
// write to state owned by index i, which makes results bit-identical for any
// worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace qus
