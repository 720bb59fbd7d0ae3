#pragma once

#include <cstddef>

// Heap accounting for the benchmark harness. Counting is enabled in any
// binary that links memtrack.cpp's malloc family interposers (glibc only).
namespace cfx::memtrack {

/// False when the allocation hooks are not in effect.
bool active();

std::size_t current_bytes();
std::size_t peak_bytes();

/// Sets the peak to the current live byte count.
void reset_peak();

/// Peak live bytes above the level at construction.
class Scope {
 public:
  Scope();
  std::size_t peak_delta() const;

 private:
  std::size_t base_;
};

}  // namespace cfx::memtrack
