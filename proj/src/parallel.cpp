#include "shelab/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace shelab::par {

int thread_count() {
    if (const char* env = std::getenv("SHELAB_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

std::vector<Chunk> make_chunks(int64_t n_items, int n_chunks) {
    std::vector<Chunk> chunks;
    if (n_items <= 0) return chunks;
    n_chunks = std::max(1, n_chunks);
    int64_t per = (n_items + n_chunks - 1) / n_chunks;
    int idx = 0;
    for (int64_t b = 0; b < n_items; b += per) {
        Chunk c;
        c.begin = b;
        c.end = std::min(b + per, n_items);
        c.index = idx++;
        chunks.push_back(c);
    }
    return chunks;
}

void run_chunks(const std::vector<Chunk>& chunks,
                const std::function<void(const Chunk&)>& body, int threads) {
    if (threads <= 0) threads = thread_count();
    if (threads == 1 || chunks.size() <= 1) {
        for (const Chunk& c : chunks) body(c);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr error;
    std::mutex err_mutex;
    auto worker = [&]() {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= chunks.size()) return;
            try {
                body(chunks[i]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    int n_workers = std::min<int>(threads, static_cast<int>(chunks.size()));
    pool.reserve(n_workers);
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace shelab::par
