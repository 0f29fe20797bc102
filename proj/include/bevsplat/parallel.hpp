#pragma once

#include <cstddef>
#include <functional>

namespace bevsplat {

/// Worker-thread cap: min(hardware, BEVSPLAT_THREADS env, programmatic cap).
int effective_thread_count();

/// 0 restores the env/hardware default.
void set_thread_cap(int n);

/// Runs fn(i) for i in [0, n) on contiguous static chunks. Chunk assignment
/// depends only on n and the thread count, never on timing, so any
/// per-chunk output written to disjoint slots is deterministic.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Chunked variant: fn(chunk_index, begin, end). Chunks are contiguous and
/// indexed 0..chunks-1 so callers can merge per-chunk results in fixed order.
void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

}  // namespace bevsplat
