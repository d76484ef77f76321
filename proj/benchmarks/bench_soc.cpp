#include <benchmark/benchmark.h>

#include "bridgekit/soc.hpp"

using namespace bridgekit;

namespace {

soc::SocProblem quadratic() {
    soc::SocProblem p;
    p.sigma_of_t = [](double) { return 1.0; };
    p.terminal_cost = [](std::span<const double> x) { return 0.5 * x[0] * x[0]; };
    p.init = paths::point_init(Vec::Zero(1));
    return p;
}

}  // namespace

static void BM_HjbGrid(benchmark::State& state) {
    auto p = quadratic();
    const auto n = std::size_t(state.range(0));
    soc::SpaceGrid space{{{-3.0, 3.0, n}}};
    for (auto _ : state) benchmark::DoNotOptimize(soc::hjb_solve_grid(p, space, n).values.data());
}
BENCHMARK(BM_HjbGrid)->Arg(51)->Arg(201)->Unit(benchmark::kMillisecond);

static void BM_FeynmanKac(benchmark::State& state) {
    auto p = quadratic();
    soc::SpaceGrid space{{{-3.0, 3.0, 51}}};
    for (auto _ : state) benchmark::DoNotOptimize(soc::feynman_kac_value(p, space, 51, 1024, 5).values.data());
}
BENCHMARK(BM_FeynmanKac)->Unit(benchmark::kMillisecond);

static void BM_RelativeEntropyLoss(benchmark::State& state) {
    auto p = quadratic();
    VectorField best = [](std::span<const double> x, double t, std::span<double> out) { out[0] = -x[0] / (2.0 - t); };
    auto ens = paths::simulate_sde(p.sde(best), p.init, 10000, 100, 4);
    for (auto _ : state) benchmark::DoNotOptimize(soc::loss_relative_entropy(best, p, ens).value);
}
BENCHMARK(BM_RelativeEntropyLoss)->Unit(benchmark::kMillisecond);
