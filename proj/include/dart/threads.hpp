// Minimal data-parallel helper. Work is always split into a fixed number of
// chunks regardless of the worker count, so any reduction merged in chunk
// order yields bitwise-identical results for every --threads setting.
#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace dart {

inline int& thread_count() {
  static int n = static_cast<int>(std::thread::hardware_concurrency());
  return n;
}

inline void set_thread_count(int n) { thread_count() = n > 0 ? n : 1; }

inline constexpr int kParallelChunks = 64;

// fn(chunk_id, begin, end) over [0, count) split into kParallelChunks ranges.
// Chunk boundaries do not depend on the number of workers.
inline void parallel_chunks(std::size_t count, const std::function<void(int, std::size_t, std::size_t)>& fn) {
  if (count == 0) return;
  const int chunks = static_cast<int>(std::min<std::size_t>(kParallelChunks, count));
  auto range = [&](int c) {
    std::size_t b = count * static_cast<std::size_t>(c) / chunks;
    std::size_t e = count * static_cast<std::size_t>(c + 1) / chunks;
    return std::pair<std::size_t, std::size_t>(b, e);
  };
  int workers = std::min(thread_count(), chunks);
  if (workers <= 1) {
    for (int c = 0; c < chunks; ++c) {
      auto [b, e] = range(c);
      fn(c, b, e);
    }
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        int c = next.fetch_add(1);
        if (c >= chunks) return;
        auto [b, e] = range(c);
        fn(c, b, e);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace dart
