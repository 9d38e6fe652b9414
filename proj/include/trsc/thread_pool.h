#pragma once

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace trsc {

// Persistent worker pool with deterministic static partitioning.
//
// parallel_for splits [0, n) into one contiguous chunk per worker. Every
// index is processed by exactly one worker, so any computation whose
// per-index result does not depend on other indices produces bit-identical
// output for every thread count.
class ThreadPool {
 public:
  explicit ThreadPool(int threads);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int threads() const { return n_threads_; }

  // Calls fn(begin, end) once per non-empty chunk; the calling thread runs
  // chunk 0 while workers run the rest. Returns after all chunks finish.
  void parallel_for(size_t n, const std::function<void(size_t, size_t)>& fn);

 private:
  void worker_loop(int worker_index);
  static std::pair<size_t, size_t> chunk_bounds(size_t n, int chunks, int index);

  int n_threads_;
  std::vector<std::thread> workers_;

  std::mutex mutex_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  const std::function<void(size_t, size_t)>* job_fn_ = nullptr;
  size_t job_n_ = 0;
  uint64_t generation_ = 0;
  int pending_ = 0;
  bool stopping_ = false;
};

// Serial fallback when pool is null or has a single thread.
void parallel_for(ThreadPool* pool, size_t n, const std::function<void(size_t, size_t)>& fn);

}  // namespace trsc
