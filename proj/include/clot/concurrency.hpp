#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace clot {

/// Runs fn(i) for i in [0, count) on at most `workers` threads. Each index is
/// visited exactly once; callers write results into slot i so output order
/// matches input order whatever the completion order. The first exception
/// thrown by fn is rethrown after all workers finish.
inline void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Counting gate bounding the number of concurrent holders.
class InflightGate {
 public:
  explicit InflightGate(std::size_t cap) : cap_(std::max<std::size_t>(1, cap)) {}

  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return held_ < cap_; });
    ++held_;
    peak_ = std::max(peak_, held_);
  }

  void release() {
    {
      std::lock_guard lock(mu_);
      --held_;
    }
    cv_.notify_one();
  }

  std::size_t peak() const {
    std::lock_guard lock(mu_);
    return peak_;
  }

 private:
  std::size_t cap_;
  std::size_t held_ = 0;
  std::size_t peak_ = 0;
  mutable std::mutex mu_;
  std::condition_variable cv_;
};

}  // namespace clot
