#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace clwrx {

// Worker count: CLWRX_THREADS when set, otherwise the hardware concurrency.
inline std::size_t worker_threads() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CLWRX_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) n = static_cast<std::size_t>(v);
        } catch (...) {
        }
    }
    return n;
}

// Calls fn(i) for i in [0, n) across worker threads. Each index is handled
// exactly once and results must be written to per-index slots, so the outcome
// never depends on scheduling. The first exception (lowest index) is rethrown.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t threads = worker_threads()) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::size_t> error_index(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            const std::size_t lo = n * w / threads;
            const std::size_t hi = n * (w + 1) / threads;
            for (std::size_t i = lo; i < hi; ++i) {
                try {
                    fn(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                    error_index[w] = i;
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (std::size_t w = 0; w < threads; ++w)
        if (errors[w]) std::rethrow_exception(errors[w]);
}

}  // namespace clwrx
