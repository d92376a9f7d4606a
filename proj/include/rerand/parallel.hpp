#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rerand {

// Runs body(chunk) for chunk in [0, n_chunks) on up to `threads` workers.
// Chunks are claimed dynamically but each chunk's work depends only on its
// index, so callers that write into per-chunk slots get results that are
// identical for every thread count. The first exception thrown by any chunk
// is rethrown on the calling thread.
template <typename Body>
void for_each_chunk(std::size_t n_chunks, unsigned threads, Body&& body) {
  const std::size_t workers = std::min<std::size_t>(std::max(1U, threads), n_chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) body(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      try {
        body(c);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n_chunks);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

inline std::size_t chunk_count(std::size_t total, std::size_t chunk_size) {
  return (total + chunk_size - 1) / chunk_size;
}

}  // namespace rerand
