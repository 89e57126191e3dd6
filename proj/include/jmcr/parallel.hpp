#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace jmcr {

// Process-wide worker count. 0 means "use hardware_concurrency".
inline std::atomic<int>& thread_count_setting() {
    static std::atomic<int> value{0};
    return value;
}

inline void set_thread_count(int n) { thread_count_setting().store(n); }

inline int effective_thread_count() {
    int n = thread_count_setting().load();
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    return n < 1 ? 1 : n;
}

// Runs fn(block_index, begin, end) over [0, count) split into fixed-size
// blocks. The block size is a constant, never a function of the worker
// count, so a caller that combines per-block partial results in block order
// gets bit-identical sums for any number of threads.
template <typename Fn>
void parallel_blocks(std::size_t count, std::size_t block_size, Fn&& fn) {
    if (count == 0) return;
    const std::size_t n_blocks = (count + block_size - 1) / block_size;
    const int n_threads =
        static_cast<int>(std::min<std::size_t>(n_blocks, static_cast<std::size_t>(effective_thread_count())));

    if (n_threads <= 1) {
        for (std::size_t b = 0; b < n_blocks; ++b) {
            fn(b, b * block_size, std::min(count, (b + 1) * block_size));
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (;;) {
            const std::size_t b = next.fetch_add(1);
            if (b >= n_blocks) return;
            try {
                fn(b, b * block_size, std::min(count, (b + 1) * block_size));
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n_threads) - 1);
    for (int t = 1; t < n_threads; ++t) threads.emplace_back(worker);
    worker();
    for (auto& th : threads) th.join();
    if (error) std::rethrow_exception(error);
}

// Map-reduce over items with deterministic ordered reduction: each block
// produces a partial via `make` + `accumulate`, partials are then combined
// serially in block index order.
template <typename Partial, typename Make, typename Accumulate, typename Combine>
Partial block_reduce(std::size_t count, std::size_t block_size, Make&& make,
                     Accumulate&& accumulate, Combine&& combine) {
    const std::size_t n_blocks = count == 0 ? 0 : (count + block_size - 1) / block_size;
    std::vector<Partial> partials(n_blocks);
    parallel_blocks(count, block_size, [&](std::size_t b, std::size_t begin, std::size_t end) {
        Partial part = make();
        for (std::size_t i = begin; i < end; ++i) accumulate(part, i);
        partials[b] = std::move(part);
    });
    Partial total = make();
    for (auto& part : partials) combine(total, part);
    return total;
}

// Fixed block size used for per-cluster reductions throughout the library.
inline constexpr std::size_t kClusterBlock = 64;

} // namespace jmcr
