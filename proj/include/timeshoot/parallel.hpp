#pragma once

#include <cstddef>
#include <functional>

namespace timeshoot {

/// Worker count used by every batched integration. Defaults to 1.
void set_thread_count(int threads);
int thread_count();

/// Runs `body(i)` for i in [0, n) on the worker pool. Elements must be
/// independent. If any element throws, the error of the lowest failing index
/// is rethrown after all elements finish; library errors get an
/// "element <i>: " prefix.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace timeshoot
