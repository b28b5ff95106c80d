#pragma once

#include <cstddef>
#include <functional>

namespace trinet {

/// Worker count: TRINET_THREADS when set to a positive integer, else the
/// hardware concurrency (at least 1).
int thread_count();

/// Runs fn(i) for i in [0, n) on up to thread_count() threads. Each index is
/// processed exactly once; results must not depend on scheduling. The first
/// exception thrown by any task is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace trinet
