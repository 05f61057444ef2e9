#pragma once

#include <functional>

namespace laneseq {

// Number of worker threads: hardware concurrency, capped by the
// LANE2SEQ_THREADS environment variable when set.
int worker_count();

// Runs fn(i) for i in [0, n) on up to worker_count() threads with static
// contiguous chunking. Each index runs single-threaded, so any floating-point
// work inside is reproducible regardless of scheduling; callers that reduce
// results must do so in index order to stay deterministic. The first
// exception thrown by any worker is rethrown on the calling thread.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace laneseq
