#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace tlab {

struct MeanStderr {
    double mean = 0.0;
    double stderr = 0.0;
    double sd = 0.0;
    std::size_t count = 0;
};

// Two-pass mean and standard error over values in index order, so the result
// does not depend on which thread produced which value.
inline MeanStderr mean_stderr(const std::vector<double>& xs) {
    MeanStderr out;
    out.count = xs.size();
    if (xs.empty()) return out;
    double sum = 0.0;
    for (double x : xs) sum += x;
    out.mean = sum / xs.size();
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - out.mean) * (x - out.mean);
        out.sd = std::sqrt(ss / (xs.size() - 1));
        out.stderr = out.sd / std::sqrt(static_cast<double>(xs.size()));
    }
    return out;
}

inline int default_threads() {
    if (const char* env = std::getenv("TLAB_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
// processed exactly once; the first exception is rethrown on the caller.
template <class Body>
void parallel_for(std::size_t count, int threads, Body&& body) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(count);
            }
        }
    };
    const std::size_t n = std::min<std::size_t>(threads, count);
    std::vector<std::thread> pool;
    pool.reserve(n);
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace tlab
