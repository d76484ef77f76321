#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bridgekit {

/// Mixes a root seed with a stream index into an independent engine seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Stream index for a named purpose, so that different consumers of one seed do not collide.
std::uint64_t stream_id(std::string_view name);

/// Per-stream random source. Results depend only on (seed, stream), never on thread scheduling.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream);

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);
    /// Draw from the categorical law given by nonnegative weights summing to `total`.
    template <class Weights>
    std::size_t categorical(const Weights& w, std::size_t n, double total) {
        const double u = uniform() * total;
        double c = 0.0;
        std::size_t last = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (w[i] <= 0.0) continue;
            c += w[i];
            last = i;
            if (u < c) return i;
        }
        return last;
    }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace bridgekit
