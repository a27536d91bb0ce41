#include "grc/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace grc {

namespace {

std::atomic<int> g_override{0};

int default_threads() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("GRC_THREADS")) {
        try {
            const int cap = std::stoi(env);
            if (cap >= 1) hw = std::min(hw, cap);
        } catch (const std::exception&) {
            // ignore malformed values
        }
    }
    return hw;
}

}  // namespace

int thread_count() {
    const int forced = g_override.load();
    return forced > 0 ? forced : default_threads();
}

void set_thread_count(int threads) { g_override.store(std::max(threads, 0)); }

void parallel_for(int n, const std::function<void(int)>& body) {
    const int workers = std::min(thread_count(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
        const int begin = n * t / workers;
        const int end = n * (t + 1) / workers;
        pool.emplace_back([&body, begin, end] {
            for (int i = begin; i < end; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace grc
