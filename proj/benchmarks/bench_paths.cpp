#include <benchmark/benchmark.h>

#include "bridgekit/gaussian_bridge.hpp"
#include "bridgekit/path_sim.hpp"

using namespace bridgekit;

static void BM_EulerMaruyamaOu(benchmark::State& state) {
    paths::SdeSpec spec;
    spec.ref_drift = [](std::span<const double> x, double, std::span<double> out) { out[0] = -x[0]; };
    spec.sigma_of_t = [](double) { return 1.0; };
    auto init = paths::point_init(Vec::Constant(1, 1.0));
    const auto n = std::size_t(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(paths::simulate_sde(spec, init, n, 200, 7).states.data());
    state.SetItemsProcessed(std::int64_t(state.iterations()) * state.range(0) * 200);
}
BENCHMARK(BM_EulerMaruyamaOu)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

static void BM_GirsanovLogRnd(benchmark::State& state) {
    paths::SdeSpec spec;
    spec.sigma_of_t = [](double) { return 1.0; };
    VectorField zero = [](std::span<const double>, double, std::span<double> out) { out[0] = 0.0; };
    VectorField push = [](std::span<const double> x, double t, std::span<double> out) { out[0] = 0.7 - 0.2 * x[0] * t; };
    auto ens = paths::simulate_sde(spec, paths::point_init(Vec::Zero(1)), 10000, 100, 3);
    for (auto _ : state) benchmark::DoNotOptimize(paths::girsanov_log_rnd(ens, zero, push).data());
}
BENCHMARK(BM_GirsanovLogRnd)->Unit(benchmark::kMillisecond);

static void BM_BridgeMixtureSamples(benchmark::State& state) {
    auto joint = ot::gaussian_eot_closed_form(Vec::Constant(1, -1.0), Mat::Constant(1, 1, 0.25), Vec::Constant(1, 1.5),
                                              Mat::Constant(1, 1, 1.0), 1.0);
    auto endpoints = paths::EndpointSampler::gaussian(joint);
    for (auto _ : state) benchmark::DoNotOptimize(paths::sample_bridge_mixture(endpoints, 0.5, 1.0, 100000, 9).data());
}
BENCHMARK(BM_BridgeMixtureSamples)->Unit(benchmark::kMillisecond);

static void BM_GaussianBridgeDrift(benchmark::State& state) {
    const int d = int(state.range(0));
    auto sched = gauss::compute_schedule(gauss::LinearReferenceSde::brownian(d, 1.0, 1.0));
    Mat s0 = Mat::Identity(d, d), s1 = 2.0 * Mat::Identity(d, d);
    s1(0, d - 1) = s1(d - 1, 0) = 0.3;
    gauss::GaussianBridgePath path(sched, {Vec::Zero(d), s0}, {Vec::Ones(d), s1});
    Vec x = Vec::Constant(d, 0.2);
    for (auto _ : state) benchmark::DoNotOptimize(path.drift(x, 0.4).data());
}
BENCHMARK(BM_GaussianBridgeDrift)->Arg(1)->Arg(4)->Arg(16);
