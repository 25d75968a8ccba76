#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace mpk {

// Worker count: explicit request > MPK_THREADS env > hardware concurrency.
inline int resolve_threads(int requested) {
    if (const char* env = std::getenv("MPK_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

// Static block split; fn(i) must only write state owned by index i so that
// any reduction can run in index order afterwards.
template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn) {
    threads = std::min(std::max(threads, 1), std::max(count, 1));
    if (threads <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (int i = t; i < count; i += threads) fn(i);
        });
    }
    for (std::thread& th : pool) th.join();
}

}  // namespace mpk
