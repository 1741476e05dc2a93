#pragma once

#include <cstddef>
#include <functional>

namespace qrife {

// Thread count from QRIFE_THREADS, else 1.
int default_thread_count();

// Runs body(i) for i in [0, n) on up to `threads` workers. Each index is
// visited exactly once. If any call throws, the exception of the lowest
// failing index is rethrown after all workers stop, so error reporting does
// not depend on scheduling.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t)>& body);

}  // namespace qrife
