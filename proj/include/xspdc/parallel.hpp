#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace xspdc {

/// Global worker cap (the CLI's --jobs). 0 means hardware concurrency.
void set_max_jobs(int jobs);
int max_jobs();

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunk boundaries only
/// depend on n and the job count; callers that write disjoint outputs get
/// results that are independent of the partitioning.
template <class Fn>
void parallel_chunks(std::size_t n, Fn&& fn) {
  const std::size_t jobs = std::min<std::size_t>(static_cast<std::size_t>(max_jobs()), std::max<std::size_t>(n, 1));
  if (jobs <= 1 || n < 2) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (std::size_t j = 0; j < jobs; ++j) {
    const std::size_t b = n * j / jobs;
    const std::size_t e = n * (j + 1) / jobs;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace xspdc
