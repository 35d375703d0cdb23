#pragma once

#include <cstddef>
#include <functional>

namespace sfn {

// Process-wide cap on worker threads used by column-parallel Hessian
// products, replicate fan-out and experiment fan-out. Defaults to 1.
void set_max_threads(int n);
int max_threads();

// Runs body(i) for i in [0, count), partitioned into contiguous chunks over
// at most max_threads() workers. body must only write to slots owned by i.
// Calls made from inside a worker run serially.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace sfn
