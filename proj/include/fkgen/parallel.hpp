#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <span>
#include <thread>
#include <utility>
#include <vector>

namespace fkgen {

// Deterministic pairwise tree sum over a fixed particle order. The topology
// depends only on the length, never on thread count or scheduling.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (const double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

inline int hardware_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

// Process-wide worker cap (CLI --threads). 0 means "hardware".
class ThreadBudget {
public:
    static void set(int workers) { cap().store(workers); }
    static int get() {
        const int c = cap().load();
        return c > 0 ? c : hardware_threads();
    }

private:
    static std::atomic<int>& cap() {
        static std::atomic<int> value{0};
        return value;
    }
};

// Static block partition over [0, count). Every index is handled by exactly
// one worker and workers write disjoint state, so results are identical for
// any worker count.
template <typename Body>
void parallel_blocks(std::size_t count, int workers, Body&& body) {
    if (workers <= 0) workers = ThreadBudget::get();
    const std::size_t max_workers = std::max<std::size_t>(1, std::min<std::size_t>(workers, count));
    if (max_workers == 1 || count < 2) {
        body(static_cast<std::size_t>(0), count);
        return;
    }
    const std::size_t chunk = (count + max_workers - 1) / max_workers;
    std::vector<std::thread> pool;
    pool.reserve(max_workers);
    for (std::size_t w = 0; w < max_workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(count, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([begin, end, &body] { body(begin, end); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace fkgen
