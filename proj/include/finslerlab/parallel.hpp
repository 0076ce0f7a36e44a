#pragma once

#include <cstddef>
#include <functional>

namespace finslerlab {

// Number of worker threads: FINSLERLAB_THREADS if set (>= 1), else the
// hardware concurrency.
int thread_count();

// Runs body(i) for i in [0, n). Each index writes only its own output slot, so
// results do not depend on the number of threads. The first exception thrown by
// any task is rethrown after all workers have joined.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace finslerlab
