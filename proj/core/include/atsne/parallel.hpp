#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace atsne {

/// Runs fn(i) for i in [0, n) over the hardware threads. Each index must write
/// only its own outputs.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_per_thread = 64) {
  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  const std::size_t workers = std::min(hw, n / std::max<std::size_t>(1, min_per_thread));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace atsne
