#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "compass/errors.hpp"

namespace compass {

/// Runs fn(i) for every i in [0, n) on up to `threads` workers (inline when
/// threads <= 1). When calls fail, the failure with the lowest index is
/// rethrown as Error("<label(i)>: <what>") after all workers finish; an empty
/// label rethrows the original exception unchanged.
template <class Fn, class Label>
void parallel_for(int n, int threads, Fn&& fn, Label&& label) {
  std::atomic<int> next{0};
  std::exception_ptr failure;
  int failed = -1;
  std::mutex mu;
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure || i < failed) {
          failure = std::current_exception();
          failed = i;
        }
      }
    }
  };
  const int nthreads = std::clamp(threads, 1, std::max(n, 1));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (!failure) return;
  const std::string prefix = label(failed);
  if (prefix.empty()) std::rethrow_exception(failure);
  try {
    std::rethrow_exception(failure);
  } catch (const std::exception& e) {
    throw Error(prefix + ": " + e.what());
  }
}

}  // namespace compass
