#include "timeshoot/parallel.hpp"

#include <atomic>
#include <exception>
#include <string>
#include <vector>

#include <omp.h>

#include "timeshoot/errors.hpp"

namespace timeshoot {
namespace {

std::atomic<int> g_threads{1};

}  // namespace

void set_thread_count(int threads) {
  if (threads < 1) {
    throw ConfigError("thread count must be >= 1, got " + std::to_string(threads));
  }
  g_threads.store(threads);
}

int thread_count() { return g_threads.load(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  std::vector<std::exception_ptr> errors(n);
  const int threads = thread_count();
  const auto count = static_cast<std::ptrdiff_t>(n);

#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1 && n > 1)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      e.rethrow_with_prefix("element " + std::to_string(i) + ": ");
    }
  }
}

}  // namespace timeshoot
