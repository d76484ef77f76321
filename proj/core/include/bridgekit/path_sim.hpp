#pragma once

#include "bridgekit/common.hpp"
#include "bridgekit/entropic_ot.hpp"
#include "bridgekit/random.hpp"

#include <cstdint>
#include <vector>

namespace bridgekit::paths {

/// dX = (f + sigma u)(X, t) dt + sigma_t dB. Empty `ref_drift` or `control` means zero.
struct SdeSpec {
    VectorField ref_drift;
    VectorField control;
    ScalarFn sigma_of_t;
    double horizon = 1.0;
    std::size_t dim = 1;
    void validate() const;
};

/// Writes one initial state from the given stream.
using InitSampler = std::function<void(RandomStream&, std::span<double>)>;

InitSampler point_init(Vec x0);
InitSampler gaussian_init(Vec mean, Mat cov);

struct SimulationOptions {
    bool retain_increments = true;
    /// Keep every `record_stride`-th state only; strides above 1 drop the increments.
    std::size_t record_stride = 1;
};

struct PathEnsemble {
    std::vector<double> grid;
    std::size_t n_paths = 0;
    std::size_t dim = 0;
    std::vector<double> states;      ///< [n_paths][n_times][dim]
    std::vector<double> increments;  ///< [n_paths][n_times - 1][dim], empty when not retained
    std::uint64_t seed = 0;

    std::size_t n_times() const { return grid.size(); }
    bool has_increments() const { return !increments.empty(); }
    std::span<const double> state(std::size_t path, std::size_t k) const {
        return {states.data() + (path * n_times() + k) * dim, dim};
    }
    std::span<const double> increment(std::size_t path, std::size_t k) const {
        return {increments.data() + (path * (n_times() - 1) + k) * dim, dim};
    }
    /// States of all paths at time index k, one row per path.
    Mat marginal(std::size_t k) const;
};

/// Euler-Maruyama on a uniform grid; path i draws from stream (seed, i).
PathEnsemble simulate_sde(const SdeSpec& spec, const InitSampler& init, std::size_t n_paths, std::size_t n_steps,
                          std::uint64_t seed, const SimulationOptions& options = {});

struct BrownianBridgeStats {
    Vec mean;
    double variance;
    Vec pinned_drift;
    Vec score;
};

/// Law of sigma-Brownian motion at t pinned at x0 (time 0) and xT (time T), evaluated at query x.
BrownianBridgeStats brownian_bridge_stats(const Vec& x0, const Vec& xT, double t, double horizon, double sigma,
                                          const Vec& x);

/// Draws endpoint pairs (x0, xT).
class EndpointSampler {
public:
    static EndpointSampler empirical(const ot::Coupling& coupling, Mat source_points, Mat target_points);
    static EndpointSampler gaussian(const ot::JointGaussian& joint);
    static EndpointSampler independent(InitSampler source, InitSampler target, std::size_t dim);

    std::size_t dim() const { return dim_; }
    void draw(RandomStream& rng, std::span<double> x0, std::span<double> xT) const;

private:
    enum class Mode { Empirical, Gaussian, Independent } mode_ = Mode::Independent;
    std::size_t dim_ = 0;
    std::vector<double> cumulative_;
    std::size_t n_cols_ = 0;
    Mat source_, target_;
    Vec mean_;
    Mat factor_;
    InitSampler sample0_, sampleT_;
};

/// Samples of the mixture of Brownian bridges at time t, one row per sample.
Mat sample_bridge_mixture(const EndpointSampler& endpoints, double t, double sigma, std::size_t n,
                          std::uint64_t seed, double horizon = 1.0);

struct InterpolantSpec {
    std::function<Vec(const Vec&, const Vec&, double)> interpolant;
    ScalarFn gamma;
    double horizon = 1.0;

    static InterpolantSpec linear(double horizon, ScalarFn gamma);
};

Vec interpolant_sample(const InterpolantSpec& spec, const Vec& x0, const Vec& xT, double t, std::uint64_t seed);

/// log dP^{u_tilde}/dP^{u} along each path of an ensemble simulated under u.
Vec girsanov_log_rnd(const PathEnsemble& ensemble, const VectorField& u, const VectorField& u_tilde);

/// Mean of 0.5 sum |u_tilde - u|^2 dt over an ensemble simulated under u_tilde.
McEstimate path_kl_estimate(const PathEnsemble& ensemble, const VectorField& u, const VectorField& u_tilde);

/// (x, s) -> -f(x, T - s) + sigma_{T-s}^2 score(x, T - s).
VectorField reverse_drift(VectorField forward_drift, VectorField score, ScalarFn sigma_of_t, double horizon);

struct Histogram {
    std::vector<double> left, right, density;
};

/// Density histogram normalized by the total sample count.
Histogram marginal_histogram(std::span<const double> samples, double lo, double hi, int bins);

}  // namespace bridgekit::paths
