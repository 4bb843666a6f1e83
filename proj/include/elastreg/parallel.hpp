#pragma once

#include <cstddef>
#include <functional>

namespace elastreg {

/// Worker count from ELASTREG_JOBS, else 1.
int default_jobs();

/// Runs fn(0..count-1) on up to `jobs` threads. Each index runs exactly once;
/// callers write results into per-index slots so the output order never
/// depends on scheduling. The first exception (lowest index) is rethrown.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

} // namespace elastreg
