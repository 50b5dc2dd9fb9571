#pragma once

#include <cstddef>
#include <functional>

namespace nodect {

/// Caps the worker count used by the projector, filters and network layers.
/// A value of 1 makes every computation single-threaded and bitwise reproducible.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Splits [0, n) into at most num_threads() contiguous chunks and runs
/// body(chunk_index, begin, end) for each. Chunk boundaries depend only on n and
/// the thread count, so reductions over chunks are deterministic.
void parallel_chunks(std::size_t n,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& body);

/// Number of chunks parallel_chunks(n, ...) will produce.
std::size_t chunk_count(std::size_t n);

inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  parallel_chunks(n, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) body(i);
  });
}

}  // namespace nodect
