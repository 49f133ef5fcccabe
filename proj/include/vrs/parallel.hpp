#pragma once

#include <cstddef>
#include <functional>

namespace vrs {

/// Worker cap: VRS_THREADS if set to a positive integer, else all cores.
unsigned worker_count();

/// Calls task(i) for i in [0, count) on up to worker_count() threads.
/// Tasks must write only to their own output slot; callers combine slots in
/// index order so results never depend on the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& task);

} // namespace vrs
