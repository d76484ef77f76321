#pragma once

#include "bridgekit/common.hpp"
#include "bridgekit/path_sim.hpp"

#include <vector>

namespace bridgekit::soc {

/// Minimize E[ int (0.5 |u|^2 + c) dt + Phi(X_T) ] subject to dX = (f + sigma u) dt + sigma dB.
struct SocProblem {
    VectorField ref_drift;       ///< empty means zero
    ScalarFn sigma_of_t;
    StateTimeFn running_cost;    ///< empty means zero
    StateFn terminal_cost;
    double horizon = 1.0;
    std::size_t dim = 1;
    paths::InitSampler init;

    void validate() const;
    paths::SdeSpec sde(VectorField control = {}) const;
};

/// Uniform axis with n nodes from lo to hi inclusive.
struct Axis {
    double lo = 0.0, hi = 1.0;
    std::size_t n = 2;
    double step() const { return (hi - lo) / double(n - 1); }
    double node(std::size_t i) const { return i + 1 == n ? hi : lo + double(i) * step(); }
};

/// Tensor grid of one or two axes; node index is row-major with the last axis fastest.
struct SpaceGrid {
    std::vector<Axis> axes;
    std::size_t dim() const { return axes.size(); }
    std::size_t size() const;
    Vec node(std::size_t flat) const;
    void validate() const;
};

std::vector<double> uniform_times(double horizon, std::size_t n_times);

struct ValueGrid {
    SpaceGrid space;
    std::vector<double> times;
    Mat values;      ///< [time][node]
    Mat std_error;   ///< same shape when estimated by Monte Carlo, else empty

    double potential(std::size_t k, std::size_t i) const { return std::exp(-values(Eigen::Index(k), Eigen::Index(i))); }
    /// Multilinear interpolation in space at time index k.
    double value_at(std::size_t k, std::span<const double> x) const;
};

struct FeynmanKacOptions {
    /// Stratify the Gaussian draw when the terminal state is exactly Gaussian (zero drift, zero running cost, 1-D).
    bool stratify = true;
};

/// V_t(x) = -log E[exp(-int c - Phi(X_T)) | X_t = x] by uncontrolled simulation from each node.
ValueGrid feynman_kac_value(const SocProblem& problem, const SpaceGrid& space, std::size_t n_times, std::size_t n_mc,
                            std::uint64_t seed, const FeynmanKacOptions& options = {});

struct HjbOptions {
    double theta = 0.5;        ///< 1 = implicit Euler, 0.5 = Crank-Nicolson
    std::size_t substeps = 2;  ///< time steps per grid interval
    double padding_sd = 5.0;   ///< domain extension in units of sigma sqrt(T)
};

/// Backward solve of the linear potential equation for phi = exp(-V) with reflecting far boundaries.
ValueGrid hjb_solve_grid(const SocProblem& problem, const SpaceGrid& space, std::size_t n_times,
                         const HjbOptions& options = {});

/// Control linear in its parameters: u_c(x, t) = sum_f w_f(x, t) theta[f * out_dim + c].
class ParamControl {
public:
    enum class Kind { Tabular, Radial };

    /// Multilinear interpolation over space nodes and time nodes, clamped outside.
    static ParamControl tabular(SpaceGrid space, std::vector<double> times);
    /// Per time bin: constant, linear and Gaussian radial features.
    static ParamControl radial(Mat centers, double bandwidth, std::size_t time_bins, double horizon);

    Kind kind() const { return kind_; }
    std::size_t out_dim() const { return out_dim_; }
    std::size_t n_features() const;
    std::size_t n_params() const { return n_features() * out_dim_; }
    Vec& params() { return params_; }
    const Vec& params() const { return params_; }
    const SpaceGrid& space() const { return space_; }
    const std::vector<double>& times() const { return times_; }

    /// Sparse feature weights at (x, t).
    void features(std::span<const double> x, double t, std::vector<std::pair<std::size_t, double>>& out) const;
    void evaluate(std::span<const double> x, double t, std::span<double> out) const;
    VectorField field() const;

private:
    Kind kind_ = Kind::Tabular;
    std::size_t out_dim_ = 1;
    Vec params_;
    SpaceGrid space_;
    std::vector<double> times_;
    Mat centers_;
    double bandwidth_ = 1.0;
    std::size_t bins_ = 1;
    double horizon_ = 1.0;
};

/// u = -sigma_t grad V on the value grid nodes.
ParamControl control_from_value(const ValueGrid& value, const ScalarFn& sigma_of_t);

/// x -> log phi_hat_T(x) - log pi_T(x).
StateFn sb_terminal_cost(StateFn phi_hat_T, StateFn target_density);

McEstimate loss_relative_entropy(const VectorField& control, const SocProblem& problem,
                                 const paths::PathEnsemble& ensemble);

/// log dP*/dP^v per path up to a constant: -Phi - int c - 0.5 int |v|^2 - int v dB.
Vec optimal_log_weights(const SocProblem& problem, const paths::PathEnsemble& ensemble, const VectorField& proposal);

struct CrossEntropyResult {
    McEstimate loss;
    double effective_sample_size = 0.0;
    bool low_ess = false;
};

/// Self-normalized estimate of E_{P*}[0.5 int |u|^2 - int u.v dt - int u dB].
CrossEntropyResult loss_cross_entropy(const VectorField& control, const SocProblem& problem,
                                      const paths::PathEnsemble& ensemble, const VectorField& proposal,
                                      const Vec& log_weights);

/// Sample variance of F_{u,v} - Phi(X_T) (+ offset(X_0) when given).
McEstimate loss_log_variance(const VectorField& control, const SocProblem& problem,
                             const paths::PathEnsemble& ensemble, const VectorField& proposal,
                             const StateFn& initial_offset = {});

enum class LossKind { RelativeEntropy, CrossEntropy, LogVariance };

struct FitOptions {
    std::size_t budget = 2000;
    std::size_t n_paths = 2000;
    std::size_t n_steps = 100;
    double initial_step = 1.0;
    VectorField proposal;  ///< empty means the reference (zero control)
    /// Learn an additive offset of the initial state for the log-variance loss (random initial laws).
    bool learn_initial_offset = false;
    Axis offset_axis{-3.0, 3.0, 25};
    double gradient_tol = 1e-10;
};

struct FitResult {
    ParamControl control;
    std::vector<double> loss_trace;
    std::size_t evaluations = 0;
    Vec offset_params;
};

FitResult fit_control(const SocProblem& problem, LossKind loss, ParamControl representation,
                      const FitOptions& options, std::uint64_t seed);

}  // namespace bridgekit::soc
