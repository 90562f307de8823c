#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace gnaq {

// Process-wide worker cap for row-parallel loops. 0 = hardware concurrency.
inline int& thread_limit() {
    static int limit = 0;
    return limit;
}

inline void set_thread_limit(int threads) { thread_limit() = threads < 0 ? 0 : threads; }

inline unsigned effective_threads(std::size_t n) {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    unsigned t = thread_limit() > 0 ? static_cast<unsigned>(thread_limit()) : hw;
    return static_cast<unsigned>(std::min<std::size_t>(t, std::max<std::size_t>(n, 1)));
}

// Runs fn(begin, end) over contiguous chunks of [0, n). Each chunk owns a
// disjoint index range, so results are identical for any thread count as
// long as fn writes only to indices it was given.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const unsigned t = effective_threads(n);
    if (t <= 1 || n < 2048) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = (n + t - 1) / t;
    std::vector<std::thread> workers;
    workers.reserve(t);
    for (unsigned w = 0; w < t; ++w) {
        const std::size_t begin = std::min(n, w * chunk);
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        workers.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& th : workers) th.join();
}

}  // namespace gnaq
