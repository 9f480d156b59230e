#pragma once

#include <functional>

namespace ntcp {

int default_worker_count();

// Runs task(i) for i in [0, n) on up to `workers` threads (0 = default).
// Tasks must write to disjoint outputs. The first exception is rethrown
// after all workers have stopped.
void parallel_for(int n, int workers, const std::function<void(int)>& task);

}  // namespace ntcp
