#pragma once

#include <atomic>
#include <cstdint>
#include <thread>
#include <vector>

namespace dshift::detail {

// Runs fn(begin, end, chunk_index) over fixed-size chunks of [0, n).
// The chunk partition depends only on (n, chunk), never on the thread count,
// so anything indexed by chunk_index is reproducible run to run.
template <class Fn>
void parallel_chunks(int64_t n, int64_t chunk, Fn&& fn) {
    if (n <= 0) return;
    const int64_t n_chunks = (n + chunk - 1) / chunk;
    unsigned hw = std::thread::hardware_concurrency();
    int64_t n_threads = std::min<int64_t>(n_chunks, hw ? hw : 1);
    if (n_threads <= 1) {
        for (int64_t c = 0; c < n_chunks; ++c)
            fn(c * chunk, std::min(n, (c + 1) * chunk), c);
        return;
    }
    std::atomic<int64_t> next{0};
    auto worker = [&]() {
        for (int64_t c; (c = next.fetch_add(1)) < n_chunks;)
            fn(c * chunk, std::min(n, (c + 1) * chunk), c);
    };
    std::vector<std::thread> threads;
    threads.reserve(size_t(n_threads - 1));
    for (int64_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
}

inline int64_t chunk_count(int64_t n, int64_t chunk) { return (n + chunk - 1) / chunk; }

}  // namespace dshift::detail
