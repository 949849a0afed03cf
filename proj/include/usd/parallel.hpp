#pragma once

namespace usd {

// Reductions over particles run in fixed-size chunks that are combined in
// index order, so results do not depend on the number of OpenMP threads.
inline constexpr int kReduceChunk = 1024;

inline int num_chunks(int n) { return n <= 0 ? 0 : (n - 1) / kReduceChunk + 1; }

inline int chunk_begin(int c) { return c * kReduceChunk; }
inline int chunk_size(int c, int n) {
  const int b = chunk_begin(c);
  return b + kReduceChunk <= n ? kReduceChunk : n - b;
}

int max_threads();
void set_threads(int n);

// Applies the USD_THREADS cap if the environment variable is set.
// Returns the resulting thread count.
int init_threads_from_env();

}  // namespace usd
