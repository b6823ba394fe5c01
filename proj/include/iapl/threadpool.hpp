#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace iapl {

// Worker cap: IAPL_THREADS if set, else hardware concurrency.
inline int worker_count() {
    if (const char* env = std::getenv("IAPL_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks so that
// any index-ordered reduction done by the caller is independent of the
// worker count. fn must only touch state owned by its own index.
inline void parallel_for(int n, const std::function<void(int)>& fn, int max_workers = 0) {
    if (n <= 0) return;
    int workers = max_workers > 0 ? std::min(max_workers, worker_count()) : worker_count();
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        int lo = w * chunk;
        int hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace iapl
