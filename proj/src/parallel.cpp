#include "bevsplat/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace bevsplat {

namespace {

std::atomic<int> g_thread_cap{0};

int env_thread_cap() {
    static const int cached = [] {
        const char* s = std::getenv("BEVSPLAT_THREADS");
        if (!s) return 0;
        const int v = std::atoi(s);
        return v > 0 ? v : 0;
    }();
    return cached;
}

}  // namespace

int effective_thread_count() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const int env = env_thread_cap(); env > 0) n = std::min(n, env);
    if (const int cap = g_thread_cap.load(); cap > 0) n = std::min(n, cap);
    return n;
}

void set_thread_cap(int n) { g_thread_cap.store(n > 0 ? n : 0); }

void parallel_chunks(std::size_t n,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t threads =
        std::min<std::size_t>(static_cast<std::size_t>(effective_thread_count()), n);
    if (threads <= 1) {
        fn(0, 0, n);
        return;
    }
    const std::size_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, t, begin, end] { fn(t, begin, end); });
    }
    for (auto& th : pool) th.join();
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    parallel_chunks(n, [&fn](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
    });
}

}  // namespace bevsplat
