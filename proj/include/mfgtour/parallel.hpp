#ifndef MFGTOUR_PARALLEL_HPP_INCLUDED
#define MFGTOUR_PARALLEL_HPP_INCLUDED

#include <algorithm>
#include <thread>
#include <vector>

namespace mfgtour::detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0: hardware
/// concurrency) with a fixed strided assignment.
template <typename Fn>
void parallel_for(int n, unsigned threads, Fn&& fn) {
  const unsigned hw = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers = std::min<unsigned>(hw, static_cast<unsigned>(std::max(n, 0)));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (int i = static_cast<int>(w); i < n; i += static_cast<int>(workers)) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace mfgtour::detail

#endif  // MFGTOUR_PARALLEL_HPP_INCLUDED
