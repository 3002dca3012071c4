#pragma once

#include <cstddef>
#include <functional>

namespace dpd {

// Worker count used by ops that split work over the batch dimension.
// Defaults to the DPD_NUM_THREADS environment variable, else 1.
int num_threads();
void set_num_threads(int n);

// Runs fn(worker, begin, end) over contiguous chunks of [0, count). Chunk
// boundaries depend only on count and the worker count, so per-worker partial
// results can be reduced in worker order deterministically.
void parallel_for(std::size_t count,
                  const std::function<void(int worker, std::size_t begin, std::size_t end)>& fn);

// Number of workers parallel_for will use for `count` items.
int worker_count(std::size_t count);

}  // namespace dpd
