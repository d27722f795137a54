#pragma once

#include <cstddef>
#include <functional>

namespace difaug {

// Worker cap: DIFAUG_THREADS when set to a positive integer, otherwise the
// number of hardware threads.
std::size_t worker_count();

// Runs fn(i) for every i in [0, n). Each index is handled by exactly one
// worker, so callers that write only to per-index slots get results that do
// not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace difaug
