#include "trsc/thread_pool.h"

#include <algorithm>

#include "trsc/error.h"

namespace trsc {

ThreadPool::ThreadPool(int threads) : n_threads_(threads) {
  if (threads < 1) throw ConfigError("thread count must be >= 1, got " + std::to_string(threads));
  workers_.reserve(static_cast<size_t>(threads - 1));
  for (int i = 1; i < threads; ++i) {
    workers_.emplace_back([this, i] { worker_loop(i); });
  }
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    stopping_ = true;
  }
  start_cv_.notify_all();
  for (auto& w : workers_) w.join();
}

std::pair<size_t, size_t> ThreadPool::chunk_bounds(size_t n, int chunks, int index) {
  const size_t q = n / static_cast<size_t>(chunks);
  const size_t r = n % static_cast<size_t>(chunks);
  const size_t idx = static_cast<size_t>(index);
  const size_t begin = idx * q + std::min(idx, r);
  const size_t end = begin + q + (idx < r ? 1 : 0);
  return {begin, end};
}

void ThreadPool::worker_loop(int worker_index) {
  uint64_t seen = 0;
  for (;;) {
    const std::function<void(size_t, size_t)>* fn = nullptr;
    size_t n = 0;
    {
      std::unique_lock<std::mutex> lock(mutex_);
      start_cv_.wait(lock, [&] { return stopping_ || generation_ != seen; });
      if (stopping_) return;
      seen = generation_;
      fn = job_fn_;
      n = job_n_;
    }
    auto [begin, end] = chunk_bounds(n, n_threads_, worker_index);
    if (begin < end) (*fn)(begin, end);
    {
      std::lock_guard<std::mutex> lock(mutex_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }
}

void ThreadPool::parallel_for(size_t n, const std::function<void(size_t, size_t)>& fn) {
  if (n == 0) return;
  if (n_threads_ == 1 || n == 1) {
    fn(0, n);
    return;
  }
  {
    std::lock_guard<std::mutex> lock(mutex_);
    job_fn_ = &fn;
    job_n_ = n;
    pending_ = n_threads_ - 1;
    ++generation_;
  }
  start_cv_.notify_all();
  auto [begin, end] = chunk_bounds(n, n_threads_, 0);
  if (begin < end) fn(begin, end);
  std::unique_lock<std::mutex> lock(mutex_);
  done_cv_.wait(lock, [&] { return pending_ == 0; });
}

void parallel_for(ThreadPool* pool, size_t n, const std::function<void(size_t, size_t)>& fn) {
  if (pool != nullptr && pool->threads() > 1) {
    pool->parallel_for(n, fn);
  } else if (n > 0) {
    fn(0, n);
  }
}

}  // namespace trsc
