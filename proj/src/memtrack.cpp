#include "cfx/memtrack.hpp"

#include <malloc.h>

#include <atomic>
#include <cerrno>
#include <cstdlib>

extern "C" {
void* __libc_malloc(std::size_t);
void __libc_free(void*);
void* __libc_calloc(std::size_t, std::size_t);
void* __libc_realloc(void*, std::size_t);
void* __libc_memalign(std::size_t, std::size_t);
}

namespace {

std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};

void on_alloc(void* p) {
  if (!p) return;
  const std::size_t size = malloc_usable_size(p);
  const std::size_t now = g_current.fetch_add(size, std::memory_order_relaxed) + size;
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void on_free(void* p) {
  if (!p) return;
  g_current.fetch_sub(malloc_usable_size(p), std::memory_order_relaxed);
}

}  // namespace

extern "C" {

void* malloc(std::size_t size) {
  void* p = __libc_malloc(size);
  on_alloc(p);
  return p;
}

void free(void* p) {
  on_free(p);
  __libc_free(p);
}

void* calloc(std::size_t count, std::size_t size) {
  void* p = __libc_calloc(count, size);
  on_alloc(p);
  return p;
}

void* realloc(void* old, std::size_t size) {
  const std::size_t old_size = old ? malloc_usable_size(old) : 0;
  void* p = __libc_realloc(old, size);
  if (p || size == 0) {
    g_current.fetch_sub(old_size, std::memory_order_relaxed);
    on_alloc(p);
  }
  return p;
}

void* memalign(std::size_t alignment, std::size_t size) {
  void* p = __libc_memalign(alignment, size);
  on_alloc(p);
  return p;
}

void* aligned_alloc(std::size_t alignment, std::size_t size) {
  return memalign(alignment, size);
}

int posix_memalign(void** out, std::size_t alignment, std::size_t size) {
  if (alignment % sizeof(void*) != 0 || (alignment & (alignment - 1)) != 0) return EINVAL;
  void* p = memalign(alignment, size);
  if (!p && size != 0) return ENOMEM;
  *out = p;
  return 0;
}

}  // extern "C"

namespace cfx::memtrack {

bool active() {
  void* (*volatile alloc)(std::size_t) = std::malloc;
  void (*volatile release)(void*) = std::free;
  const std::size_t before = current_bytes();
  void* probe = alloc(1 << 16);
  const bool counted = current_bytes() >= before + (1 << 16);
  release(probe);
  return counted;
}

std::size_t current_bytes() { return g_current.load(std::memory_order_relaxed); }
std::size_t peak_bytes() { return g_peak.load(std::memory_order_relaxed); }
void reset_peak() { g_peak.store(g_current.load(std::memory_order_relaxed), std::memory_order_relaxed); }

Scope::Scope() : base_(current_bytes()) { reset_peak(); }

std::size_t Scope::peak_delta() const {
  const std::size_t peak = peak_bytes();
  return peak > base_ ? peak - base_ : 0;
}

}  // namespace cfx::memtrack
