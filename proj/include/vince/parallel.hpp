#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace vince {

namespace detail {
inline std::atomic<std::size_t>& thread_cap_override() {
    static std::atomic<std::size_t> cap{0};
    return cap;
}
}  // namespace detail

/// Worker-thread cap: set_max_threads() if called, else $VINCE_THREADS, else logical cores.
inline std::size_t max_threads() {
    if (auto cap = detail::thread_cap_override().load(); cap > 0) return cap;
    if (const char* env = std::getenv("VINCE_THREADS")) {
        try {
            long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (...) {
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

inline void set_max_threads(std::size_t n) { detail::thread_cap_override().store(n); }

/// Runs body(i) for i in [0, count). Each index is handled by exactly one worker, so any
/// body that writes only to index-owned storage yields the same result for every thread count.
template <typename Body>
void parallel_for(std::size_t count, Body&& body) {
    const std::size_t workers = std::min(max_threads(), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(run);
    run();
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace vince
