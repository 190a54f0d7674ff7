#pragma once

#include <functional>

namespace avgctl::detail {

/// Worker budget: AVGCTL_THREADS when set (>=1), hardware concurrency otherwise.
int thread_budget();

/// Runs fn(i) for i in [0, n) on up to thread_budget() threads. Exceptions
/// are captured and the first one rethrown after all workers join. Results
/// must be written to preallocated slots for determinism.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace avgctl::detail
