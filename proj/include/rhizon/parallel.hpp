#pragma once

#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "rhizon/errors.hpp"

namespace rhizon {

/// Run fn(i) for i in [0, n) on up to n_jobs threads. Work items must be
/// independent; determinism comes from each item writing only its own slot.
/// The first exception thrown by any item is rethrown on the caller.
inline void parallel_for(int n_jobs, long n, const std::function<void(long)>& fn) {
    if (n_jobs < 1) throw ParameterError("n_jobs must be >= 1");
    if (n <= 0) return;
    if (n_jobs == 1 || n == 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = static_cast<int>(std::min<long>(n_jobs, n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr err;
    std::mutex err_mu;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (long i = w; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard lock(err_mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

} // namespace rhizon
