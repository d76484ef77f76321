#pragma once

#include "bridgekit/common.hpp"
#include "bridgekit/entropic_ot.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace bridgekit::dsb {

/// Checks nonnegative off-diagonals and zero row sums.
void validate_rates(const Mat& q, double tol = 1e-12);
/// Checks a probability vector.
void validate_law(const Vec& p, double tol = 1e-12);

/// Piecewise-constant generator; pieces[k] acts on [starts[k], starts[k+1]).
struct RateMatrix {
    std::vector<double> starts{0.0};
    std::vector<Mat> pieces;
    std::vector<std::string> labels;

    static RateMatrix constant(Mat q);
    static RateMatrix piecewise(std::vector<double> starts, std::vector<Mat> pieces);
    std::size_t n_states() const { return pieces.empty() ? 0 : std::size_t(pieces.front().rows()); }
    std::size_t piece_of(double t) const;
    const Mat& at(double t) const { return pieces[piece_of(t)]; }
    void validate(double tol = 1e-12) const;
};

/// Time-dependent generator. Piecewise-constant, tabulated (linear between knots) or an arbitrary function.
/// Generators built from endpoint conditioning may have rates that blow up at the horizon; they are
/// flagged so integrators grade their steps toward it.
class Generator {
public:
    enum class Kind { PiecewiseConstant, Tabulated, Function };

    Generator(RateMatrix q);
    static Generator tabulated(std::vector<double> knots, std::vector<Mat> values, double horizon, bool singular_at_horizon);
    static Generator from_function(std::size_t n, std::function<Mat(double)> rates, double horizon,
                                   bool singular_at_horizon);

    Kind kind() const { return kind_; }
    std::size_t n_states() const { return n_; }
    Mat at(double t) const;
    const RateMatrix& pieces() const;
    const std::vector<double>& knots() const { return *knots_; }
    const std::vector<Mat>& knot_values() const { return *values_; }
    double horizon() const { return horizon_; }
    bool singular_at_horizon() const { return singular_; }

    /// Integral of the exit rate of state x over [a, b].
    double exit_integral(std::size_t x, double a, double b) const;

private:
    Generator() = default;
    Kind kind_ = Kind::Function;
    std::size_t n_ = 0;
    std::shared_ptr<const RateMatrix> pc_;
    std::shared_ptr<const std::vector<double>> knots_;
    std::shared_ptr<const std::vector<Mat>> values_;
    std::function<Mat(double)> fn_;
    double horizon_ = kInf;
    bool singular_ = false;
};

/// Samples a generator on a grid over [0, horizon] graded toward the horizon.
Generator tabulate(const Generator& g, double horizon, std::size_t base_steps = 256, double grading = 0.02,
                   double cutoff = 1e-9);

/// P_{t|s}; rows sum to one within 1e-10.
Mat transition_matrix(const Generator& q, double s, double t);
/// law * P_{t|s}.
Vec propagate_forward(const Generator& q, const Vec& law, double s, double t);
/// P_{T|t} * phi_T.
Vec propagate_backward(const Generator& q, const Vec& phi_T, double t, double T);

/// Right-continuous jump path: states[0] is the initial state, states[k + 1] is entered at jump_times[k].
struct CtmcPath {
    double horizon = 0.0;
    std::vector<double> jump_times;
    std::vector<std::size_t> states;

    std::size_t initial() const { return states.front(); }
    std::size_t final_state() const { return states.back(); }
    std::size_t n_jumps() const { return jump_times.size(); }
    std::size_t state_at(double t) const;
};

/// Gillespie sampling; time-varying rates are tabulated first and sampled by hazard inversion.
CtmcPath simulate_ctmc(const Generator& q, std::size_t x0, double T, std::uint64_t seed, std::uint64_t stream = 0);
/// n paths with initial states drawn from `init`, path i on stream i.
std::vector<CtmcPath> simulate_ctmc_batch(const Generator& q, const Vec& init, std::size_t n, double T,
                                          std::uint64_t seed);

/// log dP'/dP along a path. Returns +inf or -inf when the path leaves a support, naming the step in `violation`.
double ctmc_log_rnd(const CtmcPath& path, const Generator& q_prime, const Generator& q, const Vec& pi0_prime,
                    const Vec& pi0, std::string* violation = nullptr);

enum class KlMethod { Exact, MonteCarlo };

/// KL(P' || P) between CTMC path measures. Exact mode has zero standard error.
McEstimate ctmc_kl(const Generator& q_prime, const Generator& q, const Vec& pi0_prime, const Vec& pi0, double T,
                   KlMethod method, std::size_t n_paths = 0, std::uint64_t seed = 0);

/// Q^h(x, y) = Q0(x, y) h(y, t) / h(x, t). h must be positive and space-time harmonic on a check grid.
Generator doob_tilt(const Generator& q0, std::function<Vec(double)> h, double T, int n_checks = 8, double tol = 1e-8);

/// Generator of the reference conditioned on X_T = x_T, evaluated at time t < T.
Mat conditioned_rates(const Generator& q0, std::size_t x_T, double T, double t);
Vec conditioned_row(const Generator& q0, std::size_t x_T, double T, double t, std::size_t x);
Generator conditioned_generator(const Generator& q0, std::size_t x_T, double T);

/// Endpoint coupling mixed with reference bridges.
class ReciprocalMeasure {
public:
    ReciprocalMeasure(Generator reference, Mat coupling, double T);

    const Mat& coupling() const { return coupling_; }
    const Generator& reference() const { return ref_; }
    double horizon() const { return T_; }
    std::size_t n_states() const { return std::size_t(coupling_.rows()); }

    /// Law of X_t.
    Vec marginal(double t) const;
    /// Pi(X_T = . | X_t = x).
    Vec terminal_given(double t, std::size_t x) const;
    /// Forward Markov projection rates at time t. Rows with zero mass fall back to the reference.
    Mat forward_rates(double t) const;
    /// Reverse-time projection rates at forward time t: entry (x, z) is the rate of stepping back from x to z.
    Mat reverse_rates(double t) const;
    Generator forward_projection() const;
    /// Reverse-time projection as a generator in reversed time s = T - t.
    Generator reverse_projection() const;

private:
    Mat ref_transition(double s, double t) const;
    Generator ref_;
    Mat coupling_;
    Mat weight_;  // coupling / P_{T|0}
    double T_;
};

/// Projection rate row at (t, x); faults when x carries no mass at t.
Vec markov_projection_generator(const ReciprocalMeasure& pi, double t, std::size_t x);

/// Frequencies of (x0, xT) index pairs.
Mat empirical_coupling(const std::vector<std::pair<std::size_t, std::size_t>>& pairs, std::size_t n_states);

struct DiscreteSb {
    ReciprocalMeasure measure;
    double kl_to_reference;
    ot::SinkhornReport report;

    const Mat& coupling() const { return measure.coupling(); }
    Vec marginal(double t) const { return measure.marginal(t); }
    Generator generator() const { return measure.forward_projection(); }
};

/// Schrodinger bridge between pi0 and piT for the reference q0 over [0, T].
DiscreteSb discrete_sb_exact(const Generator& q0, const Vec& pi0, const Vec& piT, double T);

/// Cost-to-go V[k][x] at times[k]; the last row equals the terminal cost.
struct DiscreteValue {
    std::vector<double> times;
    Mat values;
    Mat potential() const { return (-values.array()).exp().matrix(); }
};

struct DiscreteControl {
    DiscreteValue value;
    Generator optimal;
};

/// V_t(x) at one time, computed in the log domain.
Vec value_at(const Generator& q0, const Vec& terminal_cost, double T, double t);
DiscreteControl discrete_value(const Generator& q0, const Vec& terminal_cost, double T, std::size_t n_times = 101);

enum class LossKind { RelativeEntropy, CrossEntropy, LogVariance };

struct DiscreteLossConfig {
    LossKind kind = LossKind::RelativeEntropy;
    bool exact = false;
    std::size_t n_paths = 10000;
    std::uint64_t seed = 0;
    /// Per-initial-state offset subtracted inside the log-variance functional.
    std::optional<Vec> offset;
};

struct DiscreteLoss {
    McEstimate estimate;
    double effective_sample_size = 0.0;
    bool low_ess_warning = false;
};

/// RE: E_u[log dP^u/dQ + Phi(X_T)]. CE: E_star[log dQ/dP^u] by self-normalized reweighting of proposal paths.
/// LV: Var_v[log dP^u/dQ + Phi(X_T) - offset(X_0)].
DiscreteLoss discrete_soc_loss(const Generator& q_u, const Generator& q0, const Vec& terminal_cost,
                               const Generator& proposal, const Vec& init, double T, const DiscreteLossConfig& config);

struct RateFitConfig {
    std::size_t pieces = 10;
    std::size_t max_iters = 3000;
    double fd_step = 1e-6;
    double grad_tol = 1e-7;
};

struct RateFit {
    RateMatrix rates;
    std::vector<double> objective_trace;
    bool converged = false;
};

/// Minimizes the exact RE loss over piecewise-constant rates by projected gradient (rates >= 0).
RateFit fit_rates_re(const RateMatrix& q0, const Vec& terminal_cost, const Vec& init, double T,
                     const RateFitConfig& config = {});

enum class DdsbmMode { Exact, Sampled };

struct DdsbmConfig {
    DdsbmMode mode = DdsbmMode::Exact;
    std::size_t n_paths = 10000;
    std::optional<Mat> initial_coupling;
};

struct DdsbmIteration {
    std::size_t iteration = 0;
    double forward_kl_to_sb = 0.0;
    double kl_to_sb = 0.0;
    double tv_to_sb = 0.0;
};

struct DdsbmResult {
    Mat coupling;
    std::vector<DdsbmIteration> report;
    Mat sb_coupling;
};

/// Alternates forward and reverse Markov projections, each followed by a reciprocal projection.
DdsbmResult ddsbm_run(const Generator& q0, const Vec& pi0, const Vec& piT, double T, std::size_t n_iters,
                      const DdsbmConfig& config, std::uint64_t seed);

}  // namespace bridgekit::dsb
