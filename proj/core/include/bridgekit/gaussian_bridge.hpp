#pragma once

#include "bridgekit/common.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace bridgekit::gauss {

struct GaussianMarginal {
    Vec mean;
    Mat cov;
    /// Checks shapes, symmetry within 1e-12 and positive eigenvalues.
    void validate() const;
};

/// dX = (c_t X + alpha_t) dt + sigma_t dB on [0, T] in `dim` dimensions.
struct LinearReferenceSde {
    ScalarFn c_of_t;
    std::function<Vec(double)> alpha_of_t;
    ScalarFn sigma_of_t;
    double horizon = 1.0;
    int dim = 1;

    static LinearReferenceSde brownian(int dim, double sigma, double horizon);
    void validate() const;
};

/// Time-dependent coefficients of the linear reference and its bridge.
class BridgeSchedule {
public:
    BridgeSchedule(LinearReferenceSde ref, int quad_points = 512, int diff_divisions = 1024);

    double horizon() const { return ref_.horizon; }
    int dim() const { return ref_.dim; }
    const LinearReferenceSde& reference() const { return ref_; }

    double tau(double t) const;
    Vec zeta(double t) const;
    /// tau_t tau_t' int_0^min(t,t') tau_s^-2 sigma_s^2 ds.
    double kappa(double t, double t2) const;
    double r(double t) const;
    double r_bar(double t) const;
    double rho(double t) const;
    double sigma_star() const;

    double r_dot(double t) const;
    double r_bar_dot(double t) const;
    Vec zeta_dot(double t) const;

private:
    struct Cumulative {
        double log_tau;
        Vec shift;       // int tau^-1 alpha
        double variance; // int tau^-2 sigma^2
    };
    Cumulative at(double t) const;
    template <class F>
    auto derivative(F&& f, double t) const;

    LinearReferenceSde ref_;
    double step_;
    double diff_step_;
    std::vector<Cumulative> table_;
    double total_variance_;
};

BridgeSchedule compute_schedule(const LinearReferenceSde& ref, int quad_points = 512);

/// Closed-form Schrodinger bridge between two Gaussians for a linear reference.
class GaussianBridgePath {
public:
    GaussianBridgePath(BridgeSchedule schedule, GaussianMarginal start, GaussianMarginal end);

    const BridgeSchedule& schedule() const { return schedule_; }
    const Mat& cross_covariance() const { return cross_; }
    const GaussianMarginal& start() const { return start_; }
    const GaussianMarginal& end() const { return end_; }

    Vec mean(double t) const;
    Mat cov(double t) const;
    Vec mean_velocity(double t) const;
    Mat s_matrix(double t) const;
    /// Drift = A x + b at time t.
    std::pair<Mat, Vec> drift_affine(double t) const;
    Vec drift(const Vec& x, double t) const;

private:
    void check_time(double t) const;

    BridgeSchedule schedule_;
    GaussianMarginal start_, end_;
    Mat cross_;
};

struct Moments {
    Vec mean;
    Mat cov;
};

Moments bridge_moments(const BridgeSchedule& schedule, const GaussianMarginal& start, const GaussianMarginal& end,
                       double t);

Vec bridge_drift(const GaussianBridgePath& path, const Vec& x, double t);

/// Drift as a vector field, precomputed at the uniform grid times k T / n_steps.
VectorField drift_field(const GaussianBridgePath& path, int n_steps);

/// Solves Sigma A + A Sigma = U for symmetric A.
Mat lyapunov_solve(const Mat& sigma, const Mat& u);

/// Trapezoidal action of a covariance path on a uniform grid over [0, horizon].
double bw_action(const std::vector<Mat>& cov_path, double horizon, const ScalarFn& sigma_of_t);

}  // namespace bridgekit::gauss
