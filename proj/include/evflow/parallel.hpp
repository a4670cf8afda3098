#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace evflow {

/// Thread count from EVFLOW_THREADS, or `fallback` when unset or invalid.
inline int threads_from_env(int fallback = 1) {
  if (const char* s = std::getenv("EVFLOW_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(s, &end, 10);
    if (end != s && *end == '\0' && v >= 1 && v <= 256) return static_cast<int>(v);
  }
  return fallback;
}

/// Fixed-size pool that splits a row range into contiguous bands.
///
/// Every call to `for_rows` blocks until all bands are finished, so a
/// pass can read one buffer and write another without further
/// synchronisation. Work assignment depends only on the band index, which
/// keeps results independent of the number of workers as long as each
/// output element is a pure function of the inputs.
class ThreadPool {
 public:
  explicit ThreadPool(int threads = 1) : threads_(std::max(1, threads)) {
    for (int i = 1; i < threads_; ++i) workers_.emplace_back([this, i] { worker_loop(i); });
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  ~ThreadPool() {
    {
      std::lock_guard lk(mu_);
      stop_ = true;
    }
    wake_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int threads() const { return threads_; }

  /// Calls body(row_begin, row_end) over [0, rows) split into bands.
  template <typename Body>
  void for_rows(int rows, Body&& body) {
    if (rows <= 0) return;
    if (threads_ == 1 || rows < 2) {
      body(0, rows);
      return;
    }
    const int bands = std::min(threads_, rows);
    std::function<void(int)> task = [&](int band) {
      const int begin = static_cast<int>(static_cast<long long>(rows) * band / bands);
      const int end = static_cast<int>(static_cast<long long>(rows) * (band + 1) / bands);
      body(begin, end);
    };
    {
      std::lock_guard lk(mu_);
      task_ = &task;
      bands_ = bands;
      pending_ = bands - 1;
      error_ = nullptr;
      ++generation_;
    }
    wake_.notify_all();

    std::exception_ptr own;
    try {
      task(0);
    } catch (...) {
      own = std::current_exception();
    }

    std::unique_lock lk(mu_);
    done_.wait(lk, [&] { return pending_ == 0; });
    task_ = nullptr;
    if (own) std::rethrow_exception(own);
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void worker_loop(int id) {
    unsigned long seen = 0;
    for (;;) {
      std::function<void(int)>* task = nullptr;
      {
        std::unique_lock lk(mu_);
        wake_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        if (id >= bands_) continue;
        task = task_;
      }
      std::exception_ptr err;
      try {
        (*task)(id);
      } catch (...) {
        err = std::current_exception();
      }
      {
        std::lock_guard lk(mu_);
        if (err && !error_) error_ = err;
        if (--pending_ == 0) done_.notify_one();
      }
    }
  }

  int threads_;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable wake_;
  std::condition_variable done_;
  std::function<void(int)>* task_ = nullptr;
  int bands_ = 0;
  int pending_ = 0;
  unsigned long generation_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

/// Runs body over rows on `pool` if given, else inline.
template <typename Body>
void for_rows(ThreadPool* pool, int rows, Body&& body) {
  if (pool)
    pool->for_rows(rows, std::forward<Body>(body));
  else
    body(0, rows);
}

}  // namespace evflow
