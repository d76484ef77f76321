#include <benchmark/benchmark.h>

#include "bridgekit/entropic_ot.hpp"

using namespace bridgekit;

namespace {

struct GridInstance {
    Vec a, b;
    Mat cost;
};

GridInstance gaussian_grid(int n) {
    Mat x(n, 1);
    GridInstance g{Vec(n), Vec(n), {}};
    for (int i = 0; i < n; ++i) {
        x(i, 0) = -6.0 + 12.0 * i / (n - 1);
        g.a[i] = std::exp(-2.0 * std::pow(x(i, 0) + 1.0, 2));
        g.b[i] = std::exp(-0.5 * std::pow(x(i, 0) - 1.5, 2));
    }
    g.a /= g.a.sum();
    g.b /= g.b.sum();
    g.cost = ot::squared_euclidean_cost(x, x);
    return g;
}

}  // namespace

static void BM_SinkhornLogDomain(benchmark::State& state) {
    auto g = gaussian_grid(int(state.range(0)));
    ot::SinkhornConfig cfg;
    cfg.epsilon = 2.0;
    for (auto _ : state) benchmark::DoNotOptimize(ot::sinkhorn_solve(g.a, g.b, g.cost, cfg).coupling.weights.data());
}
BENCHMARK(BM_SinkhornLogDomain)->Arg(51)->Arg(101)->Arg(201)->Unit(benchmark::kMillisecond);

static void BM_SinkhornMultiplicative(benchmark::State& state) {
    auto g = gaussian_grid(int(state.range(0)));
    ot::SinkhornConfig cfg;
    cfg.epsilon = 2.0;
    cfg.log_domain = false;
    for (auto _ : state) benchmark::DoNotOptimize(ot::sinkhorn_solve(g.a, g.b, g.cost, cfg).coupling.weights.data());
}
BENCHMARK(BM_SinkhornMultiplicative)->Arg(51)->Arg(101)->Arg(201)->Unit(benchmark::kMillisecond);

static void BM_SinkhornSmallEpsilon(benchmark::State& state) {
    auto g = gaussian_grid(101);
    ot::SinkhornConfig cfg;
    cfg.epsilon = 0.05;
    cfg.marginal_tol = 1e-7;
    cfg.max_iters = 100000;
    for (auto _ : state) benchmark::DoNotOptimize(ot::sinkhorn_solve(g.a, g.b, g.cost, cfg).coupling.weights.data());
}
BENCHMARK(BM_SinkhornSmallEpsilon)->Unit(benchmark::kMillisecond);
