#pragma once

#include <cstdlib>
#include <algorithm>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace relink {

/// Thread count from RELINK_THREADS, else 1.
inline std::size_t default_threads() {
    if (const char* env = std::getenv("RELINK_THREADS")) {
        try {
            std::size_t n = std::stoul(env);
            if (n > 0) return n;
        } catch (const std::exception&) {
        }
    }
    return 1;
}

/// Runs fn(i) for i in [0, n) on up to `threads` threads with interleaved static assignment.
/// The first exception thrown by any worker is rethrown on the caller.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    threads = std::min(threads, n);
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace relink
