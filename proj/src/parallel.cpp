#include "dpd/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace dpd {
namespace {

int threads_from_env() {
  if (const char* env = std::getenv("DPD_NUM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> setting{threads_from_env()};
  return setting;
}

}  // namespace

int num_threads() { return thread_setting().load(); }

void set_num_threads(int n) { thread_setting().store(std::max(1, n)); }

int worker_count(std::size_t count) {
  return static_cast<int>(std::min<std::size_t>(count, static_cast<std::size_t>(num_threads())));
}

void parallel_for(std::size_t count,
                  const std::function<void(int, std::size_t, std::size_t)>& fn) {
  const int workers = worker_count(count);
  if (workers <= 1) {
    if (count > 0) fn(0, 0, count);
    return;
  }
  const std::size_t chunk = (count + workers - 1) / workers;
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
      const std::size_t begin = std::min(count, t * chunk);
      const std::size_t end = std::min(count, begin + chunk);
      pool.emplace_back([&, t, begin, end] {
        try {
          if (begin < end) fn(t, begin, end);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace dpd
