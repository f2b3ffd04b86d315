#pragma once

#include <cstddef>
#include <functional>

namespace dcsam {

/// DCSAM_THREADS if set to a positive integer, else the hardware core count.
std::size_t default_thread_count();

/// Calls fn(i) for i in [0, n) on up to `threads` workers. Callers write results
/// into per-index slots and reduce in index order, which keeps runs deterministic.
/// The first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace dcsam
