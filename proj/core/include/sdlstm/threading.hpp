#pragma once

#include <functional>

#include "sdlstm/common.hpp"

namespace sdlstm {

// Process-wide kernel thread count. Kernels parallelize over output rows;
// each output element is still accumulated by exactly one thread, so results
// are identical for any thread count. Default 1.
int kernel_threads();
void set_kernel_threads(int n);

// Runs fn(begin, end) over [0, count) split into contiguous chunks, one per
// thread. Runs inline when kernel_threads() == 1 or count is small.
void parallel_rows(index count, const std::function<void(index, index)>& fn);

}  // namespace sdlstm
