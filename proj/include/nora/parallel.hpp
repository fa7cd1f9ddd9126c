#pragma once

#include <cstdint>
#include <functional>

namespace nora {

/// Thread budget: NORA_THREADS when set to a positive integer, otherwise
/// the hardware concurrency (at least 1).
int default_thread_count();

/// Runs body(i) for i in [0, count) on up to thread_count workers. Work is
/// handed out by index, so results written to per-index slots do not depend
/// on scheduling. The first exception thrown by any task is rethrown.
void parallel_for(std::int64_t count, int thread_count,
                  const std::function<void(std::int64_t)>& body);

}  // namespace nora
