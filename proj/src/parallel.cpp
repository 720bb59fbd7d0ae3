#include "cfx/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

namespace cfx::parallel {
namespace {

unsigned default_threads() {
  if (const char* env = std::getenv("CFX_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::atomic<unsigned>& thread_setting() {
  static std::atomic<unsigned> value{default_threads()};
  return value;
}

}  // namespace

unsigned threads() { return thread_setting().load(); }

void set_threads(unsigned n) { thread_setting().store(std::max(1u, n)); }

void for_each(std::size_t n_tasks, const std::function<void(std::size_t)>& task) {
  const std::size_t workers = std::min<std::size_t>(threads(), n_tasks);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) task(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  std::size_t error_index = n_tasks;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_tasks) return;
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::vector<Range> chunks(std::size_t n, std::size_t min_chunk, std::size_t max_chunks) {
  std::vector<Range> out;
  if (n == 0) return out;
  std::size_t count = (n + min_chunk - 1) / min_chunk;
  count = std::clamp<std::size_t>(count, 1, max_chunks);
  const std::size_t size = (n + count - 1) / count;
  for (std::size_t begin = 0; begin < n; begin += size) {
    out.push_back({begin, std::min(n, begin + size)});
  }
  return out;
}

}  // namespace cfx::parallel
