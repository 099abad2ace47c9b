#pragma once

#include <cstddef>
#include <functional>

namespace mmvt {

// Runs fn(i) for i in [0,n) on up to `threads` workers with a static
// partition. Results must land in caller-preallocated slots so the output is
// identical for every thread count. threads <= 1 runs inline.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace mmvt
