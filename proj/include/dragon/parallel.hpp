#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dragon::par {

/// Fixed chunk size for all parallel kernels. Chunk boundaries (and therefore
/// every floating-point reduction order) depend only on the problem size,
/// never on the thread count, so results are identical in serial and
/// parallel builds and across OMP_NUM_THREADS settings.
inline constexpr std::size_t kChunk = 64;

inline std::size_t chunk_count(std::size_t n, std::size_t chunk = kChunk) {
  return n == 0 ? 0 : (n + chunk - 1) / chunk;
}

namespace detail {

/// Exceptions must not escape an OpenMP region; the first one is captured
/// and rethrown on the calling thread.
template <class Body>
void run_chunks(std::size_t n, Body&& body) {
  const std::int64_t chunks = static_cast<std::int64_t>(chunk_count(n));
  std::exception_ptr error = nullptr;
  std::atomic<bool> failed{false};
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < chunks; ++c) {
    if (failed.load(std::memory_order_relaxed)) continue;
    try {
      const std::size_t begin = static_cast<std::size_t>(c) * kChunk;
      const std::size_t end = begin + kChunk < n ? begin + kChunk : n;
      body(static_cast<std::size_t>(c), begin, end);
    } catch (...) {
      bool expected = false;
      if (failed.compare_exchange_strong(expected, true)) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Runs fn(begin, end) over fixed-size chunks of [0, n), chunks in parallel.
/// fn must only write to locations owned by its chunk.
template <class Fn>
void for_chunks(std::size_t n, Fn&& fn) {
  detail::run_chunks(n, [&](std::size_t, std::size_t begin, std::size_t end) { fn(begin, end); });
}

/// Element-wise variant of for_chunks.
template <class Fn>
void for_each_index(std::size_t n, Fn&& fn) {
  detail::run_chunks(n, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
  });
}

/// Maps each chunk to a partial value in parallel, then lets the caller fold
/// the partials in chunk order (deterministic reduction).
template <class T, class MapFn>
std::vector<T> map_chunks(std::size_t n, MapFn&& fn) {
  std::vector<T> partials(chunk_count(n));
  detail::run_chunks(n, [&](std::size_t c, std::size_t begin, std::size_t end) {
    partials[c] = fn(begin, end);
  });
  return partials;
}

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace dragon::par
