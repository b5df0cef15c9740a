#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>

namespace flowik {

using Rng = std::mt19937_64;

// Seed for the `stream`-th independent substream of `master`. Used to give
// every row block / evaluation pose its own generator so that results do not
// depend on how work is split across threads.
std::uint64_t stream_seed(std::uint64_t master, std::uint64_t stream);

inline Rng make_stream(std::uint64_t master, std::uint64_t stream) {
  return Rng(stream_seed(master, stream));
}

// Runs fn(i) for i in [0, count) on up to `threads` workers. Tasks are
// independent; callers write results into preallocated slots indexed by i
// and reduce afterwards in index order. threads <= 0 means hardware
// concurrency.
void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t)>& fn);

int resolve_threads(int requested);

}  // namespace flowik
