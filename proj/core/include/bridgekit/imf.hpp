#pragma once

#include "bridgekit/common.hpp"
#include "bridgekit/path_sim.hpp"

#include <optional>
#include <vector>

namespace bridgekit::imf {

/// Endpoint pairs, one row per pair.
struct PairSamples {
    Mat x0;
    Mat xT;
    std::size_t size() const { return std::size_t(x0.rows()); }
};

struct RegressionDataset {
    std::vector<double> t;
    Mat x;
    Mat target;
    double horizon = 1.0;
};

/// Bridge points and drift targets (xT - x_t) / (sigma (T - t)), t uniform on (0, T - t_clip).
RegressionDataset make_regression_dataset(const PairSamples& pairs, double sigma, double horizon,
                                          std::size_t n_t_per_pair, std::uint64_t seed, double t_clip_fraction = 0.01);

struct ModelConfig {
    std::size_t n_centers = 32;
    std::size_t n_time_bins = 16;
    double ridge = 1e-6;
    /// Radial basis width in units of the center spacing.
    double bandwidth_scale = 3.0;
};

/// Piecewise-in-time regression on [1, x, radial basis] features.
struct DriftModel {
    double horizon = 1.0;
    std::size_t dim = 1;
    std::vector<double> bin_edges;
    Mat centers;
    double bandwidth = 1.0;
    std::vector<Mat> weights;  ///< per bin: n_features x dim
    bool ridge_fallback = false;

    std::size_t n_features() const { return 1 + dim + std::size_t(centers.rows()); }
    std::size_t bin_of(double t) const;
    void features(std::span<const double> x, std::span<double> out) const;
    void evaluate(std::span<const double> x, double t, std::span<double> out) const;
    Vec operator()(const Vec& x, double t) const;
    VectorField field() const;
};

DriftModel markov_projection_fit(const RegressionDataset& data, const ModelConfig& config = {});

enum class Direction { Forward, Reverse };

/// Simulates the fitted Markov SDE from `start` and returns (x0, xT) pairs. A reverse model runs from the
/// target side and its pairs are returned in forward orientation.
PairSamples reciprocal_projection(const DriftModel& model, const paths::InitSampler& start, Direction direction,
                                  std::size_t n, std::size_t n_steps, double sigma, std::uint64_t seed);

struct ImfConfig {
    std::size_t n_pairs = 20000;
    std::size_t n_t_per_pair = 40;
    std::size_t n_steps = 200;
    ModelConfig model;
    double t_clip_fraction = 0.01;
    std::size_t bootstrap = 32;
    std::size_t marginal_test_samples = 2000;
    std::size_t permutations = 200;
    /// Optional warm-start coupling; otherwise independent pairs.
    std::optional<PairSamples> initial_coupling;
};

/// Reference solution for diagnostics.
struct ImfOracle {
    std::function<Vec(const Vec&, double)> control;
    std::vector<std::pair<Vec, double>> eval_points;
};

struct ImfIteration {
    std::size_t iteration = 0;
    McEstimate coupling_kl;      ///< Gaussian-moment KL between consecutive endpoint couplings
    double regression_loss = 0.0;
    double drift_rmse = std::nan("");
    double marginal_pvalue = 1.0;  ///< model marginal at T/2 vs bridge mixture of the coupling
    Mat cross_covariance;
    bool ridge_fallback = false;
};

struct ImfState {
    PairSamples coupling;
    std::optional<DriftModel> forward_model;
    std::optional<DriftModel> reverse_model;
    std::size_t iteration = 0;
};

struct ImfResult {
    ImfState state;
    std::vector<ImfIteration> report;
    bool kl_increase_warning = false;
};

ImfResult imf_run(const paths::InitSampler& pi0, const paths::InitSampler& piT, std::size_t dim, double sigma,
                  double horizon, std::size_t n_iters, const ImfConfig& config, std::uint64_t seed,
                  const std::optional<ImfOracle>& oracle = std::nullopt);

/// Draws n samples from a sampler with stream (seed, i).
Mat draw_samples(const paths::InitSampler& sampler, std::size_t dim, std::size_t n, std::uint64_t seed);

}  // namespace bridgekit::imf
