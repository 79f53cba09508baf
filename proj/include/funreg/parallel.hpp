#pragma once

#include <functional>

namespace funreg {

// Runs fn(0..n_tasks-1) across up to n_threads workers.  Tasks are handed
// out by an atomic counter; callers must write results into per-index slots
// and reduce in index order afterwards, which keeps every aggregate
// independent of the scheduling.  The first exception thrown by a task is
// rethrown after all workers join.
void parallel_for(int n_tasks, int n_threads, const std::function<void(int)>& fn);

}  // namespace funreg
