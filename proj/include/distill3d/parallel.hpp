// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace distill3d {

/// Splits [0, count) into `workers` contiguous chunks and runs fn(worker, begin, end).
/// Chunk boundaries depend only on (count, workers), so per-worker partial results
/// reduced in worker order are deterministic for a fixed worker count.
template <class Fn>
void parallel_chunks(int count, int workers, Fn&& fn) {
    workers = std::max(1, std::min(workers, count));
    if (workers == 1) {
        fn(0, 0, count);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        const int begin = count * w / workers, end = count * (w + 1) / workers;
        pool.emplace_back([&, w, begin, end] {
            try {
                fn(w, begin, end);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace distill3d
