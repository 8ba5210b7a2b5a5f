#pragma once

#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace hyperlora {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work is split into
// contiguous static blocks, so which thread runs which item is a pure
// function of (jobs, n). Items must not share mutable state; callers
// aggregate per-item results in index order afterwards, which keeps every
// parallel stage bit-deterministic.
inline void parallel_items(int jobs, int64_t n, const std::function<void(int64_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = static_cast<int>(std::min<int64_t>(jobs, n));
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            const int64_t lo = n * w / workers;
            const int64_t hi = n * (w + 1) / workers;
            try {
                for (int64_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline int default_jobs() {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace hyperlora
