#pragma once

#include <cstddef>
#include <functional>

namespace sugar {

/// Worker cap: SUGAR_NUM_WORKERS if set and positive, else hardware concurrency.
int num_workers();

/// Runs fn(0..n-1) on up to num_workers() threads. The first exception thrown
/// by any task is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace sugar
