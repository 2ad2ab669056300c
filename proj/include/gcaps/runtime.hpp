#pragma once

#include <functional>

#include "gcaps/tensor.hpp"

namespace gcaps {

/// Keeps large tensor buffers on the heap instead of fresh mmap regions.
/// Graph construction allocates many multi-megabyte arrays per step; without
/// this every one of them is page-faulted in from zero. No-op off glibc.
void tune_allocator();

/// Runs body(begin, end) over [0, count) split into contiguous chunks on up to
/// `threads` workers. threads <= 1 runs inline, in order.
void parallel_chunks(Index count, int threads, const std::function<void(Index, Index)>& body);

}  // namespace gcaps
