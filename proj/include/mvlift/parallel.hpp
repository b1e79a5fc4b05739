#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace mvlift {

// Global worker count, set once by the CLI from --threads.
inline int& thread_count() {
    static int n = 1;
    return n;
}

// Runs fn(i) for i in [0, n) across thread_count() workers. Each index is
// assigned statically and fn must only write state owned by its own index;
// any cross-index reduction belongs in a sequential pass afterwards. Under
// that contract results are bit-identical for every thread count.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
    const int workers = std::max(1, std::min(thread_count(), n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace mvlift
