#pragma once

#include <cstddef>
#include <functional>

namespace driftalign {

// Worker count: DRIFTALIGN_THREADS if set (>= 1), else hardware concurrency.
std::size_t worker_count();

// Runs fn(i, worker) for i in [0, n). Each worker index is used by one thread
// at a time. The exception from the lowest failing i is rethrown.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t workers = 0);

}  // namespace driftalign
