#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

namespace cfx::parallel {

// Worker count used by every parallel loop. Defaults to the CFX_THREADS
// environment variable, else std::thread::hardware_concurrency().
unsigned threads();
void set_threads(unsigned n);

/// Runs task(i) for i in [0, n_tasks) on up to threads() workers. Tasks must
/// write only to slots they own; exceptions are rethrown (lowest index wins).
void for_each(std::size_t n_tasks, const std::function<void(std::size_t)>& task);

/// Half-open row range of one chunk.
struct Range {
  std::size_t begin;
  std::size_t end;
};

/// Splits [0, n) into chunks whose boundaries depend only on n, never on the
/// thread count, so chunked reductions are reproducible.
std::vector<Range> chunks(std::size_t n, std::size_t min_chunk = 4096,
                          std::size_t max_chunks = 256);

/// Pairwise reduction in a fixed tree over `parts` (merged into parts[0]).
template <class T, class Merge>
T tree_reduce(std::vector<T> parts, Merge merge) {
  if (parts.empty()) return T{};
  for (std::size_t stride = 1; stride < parts.size(); stride *= 2) {
    for (std::size_t i = 0; i + stride < parts.size(); i += 2 * stride) {
      merge(parts[i], parts[i + stride]);
    }
  }
  return std::move(parts[0]);
}

}  // namespace cfx::parallel
