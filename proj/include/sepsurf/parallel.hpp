#pragma once

#include <cstddef>
#include <functional>

namespace sepsurf {

// Worker-pool size used by parallel_for. 0 means "hardware concurrency".
// Resolution order: explicit set_threads() > SEPSURF_THREADS env var > hardware.
void set_threads(int n);
int effective_threads();

// Runs fn(begin, end) on disjoint chunks of [0, n). Callers must only write to
// per-index slots so results do not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

} // namespace sepsurf
