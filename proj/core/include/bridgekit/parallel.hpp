#pragma once

#include <cstddef>
#include <cstdlib>

namespace bridgekit {

/// Worker cap taken from BRIDGEKIT_THREADS; 0 or unset means the runtime default.
int thread_cap();

/// Runs body(i) for i in [0, n). Iterations must write disjoint outputs.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
    const long long count = static_cast<long long>(n);
    const int cap = thread_cap();
#pragma omp parallel for schedule(static) num_threads(cap) if (cap > 1 && count > 64)
    for (long long i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
}

}  // namespace bridgekit
