#pragma once

#include <cstddef>
#include <functional>

namespace atnlab {

/// Worker count: ATNLAB_THREADS when set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t worker_count();

/// Runs body(i) for i in [0, n) over contiguous chunks. Each index must write
/// only its own output slot; results are then independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace atnlab
