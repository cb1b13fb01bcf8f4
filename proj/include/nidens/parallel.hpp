#pragma once

#include <cstddef>
#include <functional>

namespace nidens {

/// Process-wide worker count used by every parallel loop. 0 means hardware
/// concurrency. Results never depend on this value: each index writes its own
/// slot and reductions happen afterwards in index order.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs body(i) for i in [0, n). Serial when n < 2 or one worker is configured.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace nidens
