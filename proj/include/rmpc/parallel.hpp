#pragma once

#include <functional>

namespace rmpc {

/// Worker count: `requested` if positive, else RMPC_THREADS if set and
/// positive, else the hardware concurrency (at least 1).
int resolve_workers(int requested);

/// Runs body(i) for i in [0, count) on up to `workers` threads. Each index is
/// processed exactly once; the first exception thrown is rethrown.
void parallel_for(int count, int workers, const std::function<void(int)>& body);

}  // namespace rmpc
