#include "sepsurf/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace sepsurf {

namespace {
std::atomic<int> g_threads{0};

int resolve_threads() {
    int n = g_threads.load(std::memory_order_relaxed);
    if (n > 0) return n;
    if (const char* env = std::getenv("SEPSURF_THREADS")) {
        const int parsed = std::atoi(env);
        if (parsed > 0) return parsed;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}
} // namespace

void set_threads(int n) { g_threads.store(n, std::memory_order_relaxed); }

int effective_threads() { return resolve_threads(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(resolve_threads()), n);
    if (workers <= 1 || n < 4) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& t : pool) t.join();
}

} // namespace sepsurf
