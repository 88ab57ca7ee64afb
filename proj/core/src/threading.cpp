#include "sdlstm/threading.hpp"

#include <atomic>
#include <thread>
#include <vector>

namespace sdlstm {

namespace {
std::atomic<int> g_threads{1};
}

int kernel_threads() { return g_threads.load(std::memory_order_relaxed); }

void set_kernel_threads(int n) {
  check_value(n >= 1, "kernel thread count must be >= 1");
  g_threads.store(n, std::memory_order_relaxed);
}

void parallel_rows(index count, const std::function<void(index, index)>& fn) {
  const int threads = kernel_threads();
  if (threads <= 1 || count < 2 * threads) {
    fn(0, count);
    return;
  }
  const index chunk = (count + threads - 1) / threads;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    const index begin = t * chunk;
    const index end = std::min<index>(begin + chunk, count);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace sdlstm
