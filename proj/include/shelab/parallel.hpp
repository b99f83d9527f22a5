#pragma once

#include <cstdint>
#include <functional>
#include <vector>

// Deterministic path-ensemble parallelism: work is split into fixed chunks by
// path index and results are merged in chunk order, so estimates do not depend
// on the thread count.

namespace shelab::par {

// SHELAB_THREADS env var, else hardware concurrency.
int thread_count();

// Ensembles always split into this many chunks regardless of the thread
// count, so reductions have one fixed order and results are bit-identical
// under any parallelism.
inline constexpr int kEnsembleChunks = 64;

struct Chunk {
    int64_t begin = 0;
    int64_t end = 0;
    int index = 0;
};

std::vector<Chunk> make_chunks(int64_t n_items, int n_chunks);

// Runs body(chunk) for each chunk on up to `threads` workers.  Exceptions are
// rethrown on the calling thread.
void run_chunks(const std::vector<Chunk>& chunks,
                const std::function<void(const Chunk&)>& body, int threads = 0);

}  // namespace shelab::par
