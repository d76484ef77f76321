#pragma once

#include "bridgekit/common.hpp"

#include <vector>

namespace bridgekit::ot {

/// Weighted finite support. Rows of `points` are support locations.
struct DiscreteMeasure {
    Mat points;
    Vec weights;

    /// Validates nonnegative weights summing to one and distinct points.
    static DiscreteMeasure make(Mat points, Vec weights);
    std::size_t size() const { return static_cast<std::size_t>(weights.size()); }
    std::size_t dim() const { return static_cast<std::size_t>(points.cols()); }
};

/// Joint weights over source x target.
struct Coupling {
    Mat weights;
    Vec source_marginal() const { return weights.rowwise().sum(); }
    Vec target_marginal() const { return weights.colwise().sum().transpose(); }
};

/// Schrodinger potentials; defined up to (phi + c, phi_hat - c).
struct DualPotentials {
    Vec phi;
    Vec phi_hat;
};

struct SinkhornConfig {
    double epsilon = 1.0;
    int max_iters = 10000;
    double marginal_tol = 1e-9;
    bool log_domain = true;
};

struct SinkhornReport {
    int iterations_used = 0;
    bool converged = false;
    /// Dual objective after every half-step.
    std::vector<double> dual_objective_trace;
    /// TV error of the marginal not enforced by the last half-step, once per iteration.
    std::vector<double> marginal_error_trace;
};

struct SinkhornResult {
    Coupling coupling;
    DualPotentials potentials;
    SinkhornReport report;
};

/// Squared Euclidean cost between the supports.
Mat squared_euclidean_cost(const Mat& source_points, const Mat& target_points);

/// Minimizes <c, pi> + eps * KL(pi || a x b) over couplings of the two weight vectors.
SinkhornResult sinkhorn_solve(const Vec& source_weights, const Vec& target_weights, const Mat& cost,
                              const SinkhornConfig& config = {});
SinkhornResult sinkhorn_solve(const DiscreteMeasure& source, const DiscreteMeasure& target, const Mat& cost,
                              const SinkhornConfig& config = {});

/// <phi, a> + <phi_hat, b> - eps * (sum exp((phi + phi_hat - c) / eps) a b - 1).
double dual_objective(const DualPotentials& potentials, const Vec& source_weights, const Vec& target_weights,
                      const Mat& cost, double epsilon);

/// exp((phi_i + phi_hat_j - c_ij) / eps) * a_i * b_j, unnormalized.
Coupling coupling_from_potentials(const DualPotentials& potentials, const Vec& source_weights,
                                  const Vec& target_weights, const Mat& cost, double epsilon);

/// Primal objective <c, pi> + eps * KL(pi || a x b).
double primal_objective(const Coupling& coupling, const Vec& source_weights, const Vec& target_weights,
                        const Mat& cost, double epsilon);

/// sum p log(p / q) with 0 log 0 = 0; +inf when p is not dominated by q.
double kl_discrete(std::span<const double> p, std::span<const double> q);
double kl_discrete(const Mat& p, const Mat& q);

/// Total variation distance 0.5 * sum |p - q|.
double total_variation(const Vec& p, const Vec& q);

/// Stacked joint Gaussian of the entropic coupling between two Gaussians.
struct JointGaussian {
    Vec mean;        ///< (mu0, muT)
    Mat covariance;  ///< [[S0, C], [C^T, ST]]
    Mat cross;       ///< C
    std::size_t dim() const { return static_cast<std::size_t>(cross.rows()); }
};

/// Optimal coupling of N(mu0, S0) and N(muT, ST) for quadratic cost with entropic weight 2 sigma^2.
JointGaussian gaussian_eot_closed_form(const Vec& mu0, const Mat& sigma0, const Vec& muT, const Mat& sigmaT,
                                       double sigma);

}  // namespace bridgekit::ot
