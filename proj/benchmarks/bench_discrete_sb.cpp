#include <benchmark/benchmark.h>

#include "bridgekit/discrete_sb.hpp"
#include "bridgekit/random.hpp"

using namespace bridgekit;

namespace {

Mat rates(int n) {
    RandomStream rng(11, 0);
    Mat q = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j)
            if (i != j) q(i, j) = 0.05 + 0.25 * rng.uniform();
        q(i, i) = -q.row(i).sum();
    }
    return q;
}

Vec law(int n, std::uint64_t seed) {
    RandomStream rng(seed, 1);
    Vec p(n);
    for (auto& v : p) v = 0.05 + rng.uniform();
    return p / p.sum();
}

}  // namespace

static void BM_TransitionMatrix(benchmark::State& state) {
    dsb::Generator g(dsb::RateMatrix::constant(rates(int(state.range(0)))));
    for (auto _ : state) benchmark::DoNotOptimize(dsb::transition_matrix(g, 0.0, 1.0).data());
}
BENCHMARK(BM_TransitionMatrix)->Arg(5)->Arg(20)->Arg(80);

static void BM_ExactDiscreteBridge(benchmark::State& state) {
    const int n = int(state.range(0));
    dsb::Generator g(dsb::RateMatrix::constant(rates(n)));
    Vec a = law(n, 12), b = law(n, 13);
    for (auto _ : state) benchmark::DoNotOptimize(dsb::discrete_sb_exact(g, a, b, 1.0).kl_to_reference);
}
BENCHMARK(BM_ExactDiscreteBridge)->Arg(5)->Arg(20)->Unit(benchmark::kMillisecond);

static void BM_GillespieBatch(benchmark::State& state) {
    dsb::Generator g(dsb::RateMatrix::constant(rates(5)));
    Vec a = law(5, 12);
    for (auto _ : state) benchmark::DoNotOptimize(dsb::simulate_ctmc_batch(g, a, 10000, 1.0, 3).data());
}
BENCHMARK(BM_GillespieBatch)->Unit(benchmark::kMillisecond);

static void BM_CtmcKlExact(benchmark::State& state) {
    dsb::Generator g(dsb::RateMatrix::constant(rates(5)));
    Mat other = rates(5);
    other.row(0) *= 2.0;
    dsb::Generator h(dsb::RateMatrix::constant(other));
    Vec a = law(5, 12);
    for (auto _ : state) benchmark::DoNotOptimize(dsb::ctmc_kl(h, g, a, a, 1.0, dsb::KlMethod::Exact).value);
}
BENCHMARK(BM_CtmcKlExact)->Unit(benchmark::kMillisecond);
