#include "bridgekit/gaussian_bridge.hpp"

#include "bridgekit/entropic_ot.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <memory>
#include <sstream>

namespace bridgekit::gauss {

void GaussianMarginal::validate() const {
    require(mean.size() > 0, "Gaussian marginal needs a nonempty mean");
    require(cov.rows() == mean.size() && cov.cols() == mean.size(), "covariance shape must match the mean");
    require(mean.allFinite(), "Gaussian mean must be finite");
    require((cov - cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12, "covariance must be symmetric");
    require_spd(cov, "covariance");
}

LinearReferenceSde LinearReferenceSde::brownian(int dim, double sigma, double horizon) {
    return {[](double) { return 0.0; }, [dim](double) { return Vec::Zero(dim).eval(); },
            [sigma](double) { return sigma; }, horizon, dim};
}

void LinearReferenceSde::validate() const {
    require(c_of_t && alpha_of_t && sigma_of_t, "linear reference needs all coefficient functions");
    require(horizon > 0.0, "horizon must be positive");
    require(dim >= 1, "dimension must be positive");
    require(alpha_of_t(0.0).size() == dim, "affine term has the wrong dimension");
}

BridgeSchedule::BridgeSchedule(LinearReferenceSde ref, int quad_points, int diff_divisions)
    : ref_(std::move(ref)) {
    ref_.validate();
    require(quad_points >= 16, "quadrature needs at least 16 nodes");
    require(diff_divisions >= 4, "difference step divisions must be at least 4");
    step_ = ref_.horizon / quad_points;
    diff_step_ = ref_.horizon / diff_divisions;
    table_.reserve(quad_points + 1);
    table_.push_back({0.0, Vec::Zero(ref_.dim), 0.0});
    for (int j = 0; j < quad_points; ++j) {
        table_.push_back(at(std::min(ref_.horizon, (j + 1) * step_)));
    }
    total_variance_ = table_.back().variance;
    if (!(total_variance_ > 0.0)) throw NumericalFault("reference has zero diffusion: kappa(T,T) = 0");
}

// Simpson from the nearest node at or below t, using the same panel rule that built the table.
BridgeSchedule::Cumulative BridgeSchedule::at(double t) const {
    if (t <= 0.0) return {0.0, Vec::Zero(ref_.dim), 0.0};
    const std::size_t j = std::min<std::size_t>(std::size_t(t / step_), table_.size() - 1);
    const Cumulative& base = table_[j];
    const double a = j * step_;
    if (t - a <= 0.0) return base;
    const double m = 0.5 * (a + t);
    const auto& c = ref_.c_of_t;
    const double lm = base.log_tau + (m - a) / 6.0 * (c(a) + 4.0 * c(0.5 * (a + m)) + c(m));
    const double lt = base.log_tau + (t - a) / 6.0 * (c(a) + 4.0 * c(m) + c(t));
    const double ta = std::exp(base.log_tau), tm = std::exp(lm), tt = std::exp(lt);
    const double sa = ref_.sigma_of_t(a), sm = ref_.sigma_of_t(m), st = ref_.sigma_of_t(t);
    Cumulative out;
    out.log_tau = lt;
    out.shift = base.shift + (t - a) / 6.0 *
                                 (ref_.alpha_of_t(a) / ta + 4.0 * ref_.alpha_of_t(m) / tm + ref_.alpha_of_t(t) / tt);
    out.variance = base.variance + (t - a) / 6.0 * (sa * sa / (ta * ta) + 4.0 * sm * sm / (tm * tm) + st * st / (tt * tt));
    return out;
}

double BridgeSchedule::tau(double t) const { return std::exp(at(t).log_tau); }

Vec BridgeSchedule::zeta(double t) const {
    const auto q = at(t);
    return std::exp(q.log_tau) * q.shift;
}

double BridgeSchedule::kappa(double t, double t2) const {
    const double lo = std::min(t, t2);
    return tau(t) * tau(t2) * at(lo).variance;
}

double BridgeSchedule::r(double t) const {
    if (t >= ref_.horizon) return 1.0;
    const double tT = tau(ref_.horizon);
    return tau(t) * at(t).variance / (tT * total_variance_);
}

double BridgeSchedule::r_bar(double t) const {
    if (t >= ref_.horizon) return 0.0;
    return tau(t) - r(t) * tau(ref_.horizon);
}

double BridgeSchedule::rho(double t) const {
    if (t >= ref_.horizon) return 1.0;
    return at(t).variance / total_variance_;
}

double BridgeSchedule::sigma_star() const {
    return std::sqrt(kappa(ref_.horizon, ref_.horizon) / tau(ref_.horizon));
}

template <class F>
auto BridgeSchedule::derivative(F&& f, double t) const {
    const double h = diff_step_, T = ref_.horizon;
    if (t - h < 0.0) return ((-3.0 * f(t) + 4.0 * f(t + h) - f(t + 2 * h)) / (2.0 * h)).eval();
    if (t + h > T) return ((3.0 * f(t) - 4.0 * f(t - h) + f(t - 2 * h)) / (2.0 * h)).eval();
    return ((f(t + h) - f(t - h)) / (2.0 * h)).eval();
}

namespace {
struct Scalar {
    double v;
    Scalar eval() const { return *this; }
    friend Scalar operator+(Scalar a, Scalar b) { return {a.v + b.v}; }
    friend Scalar operator-(Scalar a, Scalar b) { return {a.v - b.v}; }
    friend Scalar operator-(Scalar a) { return {-a.v}; }
    friend Scalar operator*(double k, Scalar a) { return {k * a.v}; }
    friend Scalar operator/(Scalar a, double k) { return {a.v / k}; }
};
}  // namespace

double BridgeSchedule::r_dot(double t) const {
    return derivative([this](double s) { return Scalar{r(s)}; }, t).v;
}

double BridgeSchedule::r_bar_dot(double t) const {
    return derivative([this](double s) { return Scalar{r_bar(s)}; }, t).v;
}

Vec BridgeSchedule::zeta_dot(double t) const {
    return derivative([this](double s) { return zeta(s); }, t);
}

BridgeSchedule compute_schedule(const LinearReferenceSde& ref, int quad_points) {
    return BridgeSchedule(ref, quad_points);
}

GaussianBridgePath::GaussianBridgePath(BridgeSchedule schedule, GaussianMarginal start, GaussianMarginal end)
    : schedule_(std::move(schedule)), start_(std::move(start)), end_(std::move(end)) {
    start_.validate();
    end_.validate();
    const int d = schedule_.dim();
    require(start_.mean.size() == d && end_.mean.size() == d, "marginals must match the reference dimension");
    // endpoint change of variables: tau_T X0 + zeta(T) against X_T with noise variance kappa(T,T)
    const double T = schedule_.horizon();
    const double tT = schedule_.tau(T);
    const Vec zT = schedule_.zeta(T);
    const double sig = std::sqrt(schedule_.kappa(T, T));
    const auto joint = ot::gaussian_eot_closed_form(tT * start_.mean + zT, tT * tT * start_.cov, end_.mean, end_.cov, sig);
    cross_ = joint.cross / tT;
}

void GaussianBridgePath::check_time(double t) const {
    if (!(t >= 0.0 && t <= schedule_.horizon())) throw NumericalFault("time outside [0, T]");
}

Vec GaussianBridgePath::mean(double t) const {
    check_time(t);
    const double T = schedule_.horizon();
    const double r = schedule_.r(t), rb = schedule_.r_bar(t);
    return rb * start_.mean + r * end_.mean + schedule_.zeta(t) - r * schedule_.zeta(T);
}

Mat GaussianBridgePath::cov(double t) const {
    check_time(t);
    const double r = schedule_.r(t), rb = schedule_.r_bar(t);
    const int d = schedule_.dim();
    Mat s = rb * rb * start_.cov + r * r * end_.cov + r * rb * (cross_ + cross_.transpose()) +
            schedule_.kappa(t, t) * (1.0 - schedule_.rho(t)) * Mat::Identity(d, d);
    return 0.5 * (s + s.transpose());
}

Vec GaussianBridgePath::mean_velocity(double t) const {
    check_time(t);
    const double T = schedule_.horizon();
    const double rd = schedule_.r_dot(t), rbd = schedule_.r_bar_dot(t);
    return rbd * start_.mean + rd * end_.mean + schedule_.zeta_dot(t) - rd * schedule_.zeta(T);
}

Mat GaussianBridgePath::s_matrix(double t) const {
    check_time(t);
    const int d = schedule_.dim();
    const double r = schedule_.r(t), rb = schedule_.r_bar(t);
    const double rd = schedule_.r_dot(t), rbd = schedule_.r_bar_dot(t);
    const double rho = schedule_.rho(t);
    const double c = schedule_.reference().c_of_t(t);
    const double s = schedule_.reference().sigma_of_t(t);
    const Mat p = rd * (r * end_.cov + rb * cross_);
    const Mat q = -rbd * (rb * start_.cov + r * cross_);
    return p - q.transpose() + (c * schedule_.kappa(t, t) * (1.0 - rho) - s * s * rho) * Mat::Identity(d, d);
}

std::pair<Mat, Vec> GaussianBridgePath::drift_affine(double t) const {
    Mat sig = cov(t);
    const int d = schedule_.dim();
    Eigen::SelfAdjointEigenSolver<Mat> es(sig);
    const double lmax = es.eigenvalues().maxCoeff(), lmin = es.eigenvalues().minCoeff();
    if (!(lmin > 0.0) || lmax / lmin > 1e12) sig += 1e-10 * Mat::Identity(d, d);
    Eigen::LLT<Mat> llt(sig);
    if (llt.info() != Eigen::Success) throw NumericalFault("bridge covariance is singular after jitter");
    const Mat a = llt.solve(s_matrix(t)).transpose();  // S^T Sigma^-1
    ensure_finite(a, "bridge drift matrix");
    const Vec b = mean_velocity(t) - a * mean(t);
    return {a, b};
}

Vec GaussianBridgePath::drift(const Vec& x, double t) const {
    auto [a, b] = drift_affine(t);
    return a * x + b;
}

Moments bridge_moments(const BridgeSchedule& schedule, const GaussianMarginal& start, const GaussianMarginal& end,
                       double t) {
    GaussianBridgePath path(schedule, start, end);
    return {path.mean(t), path.cov(t)};
}

Vec bridge_drift(const GaussianBridgePath& path, const Vec& x, double t) { return path.drift(x, t); }

VectorField drift_field(const GaussianBridgePath& path, int n_steps) {
    require(n_steps >= 1, "drift table needs at least one step");
    const double T = path.schedule().horizon(), dt = T / n_steps;
    auto table = std::make_shared<std::vector<std::pair<Mat, Vec>>>();
    for (int k = 0; k <= n_steps; ++k) table->push_back(path.drift_affine(std::min(T, k * dt)));
    return [table, dt, path](std::span<const double> x, double t, std::span<double> out) {
        const double kf = t / dt;
        const long k = std::lround(kf);
        Eigen::Map<const Vec> xv(x.data(), Eigen::Index(x.size()));
        Eigen::Map<Vec> ov(out.data(), Eigen::Index(out.size()));
        if (k >= 0 && std::size_t(k) < table->size() && std::abs(kf - double(k)) < 1e-9) {
            const auto& [a, b] = (*table)[std::size_t(k)];
            ov = a * xv + b;
        } else {
            ov = path.drift(xv, t);
        }
    };
}

Mat lyapunov_solve(const Mat& sigma, const Mat& u) {
    require(sigma.rows() == sigma.cols() && u.rows() == sigma.rows() && u.cols() == sigma.cols(),
            "Lyapunov operands must be square and of equal size");
    if ((u - u.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, u.cwiseAbs().maxCoeff()))
        throw NumericalFault("Lyapunov right-hand side is not symmetric");
    require_spd(sigma, "Lyapunov matrix");
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (sigma + sigma.transpose()));
    const Mat& v = es.eigenvectors();
    const Vec& l = es.eigenvalues();
    Mat ut = v.transpose() * u * v;
    for (Eigen::Index i = 0; i < ut.rows(); ++i)
        for (Eigen::Index j = 0; j < ut.cols(); ++j) ut(i, j) /= (l[i] + l[j]);
    Mat a = v * ut * v.transpose();
    return 0.5 * (a + a.transpose());
}

double bw_action(const std::vector<Mat>& path, double horizon, const ScalarFn& sigma_of_t) {
    const std::size_t n = path.size();
    require(n >= 3, "covariance path needs at least three points");
    require(horizon > 0.0, "horizon must be positive");
    for (const auto& s : path) require_spd(s, "covariance path entry");
    const double h = horizon / double(n - 1);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        Mat dot;
        if (k == 0) dot = (-3.0 * path[0] + 4.0 * path[1] - path[2]) / (2.0 * h);
        else if (k == n - 1) dot = (3.0 * path[n - 1] - 4.0 * path[n - 2] + path[n - 3]) / (2.0 * h);
        else dot = (path[k + 1] - path[k - 1]) / (2.0 * h);
        dot = 0.5 * (dot + dot.transpose());
        const Mat a = lyapunov_solve(path[k], dot);
        const double kinetic = 0.5 * (a * dot).trace();
        const double s = sigma_of_t(k * h);
        const double integrand = 0.5 * kinetic + s * s * s * s / 8.0 * sym_inverse(path[k]).trace();
        total += (k == 0 || k == n - 1 ? 0.5 : 1.0) * integrand * h;
    }
    return total;
}

}  // namespace bridgekit::gauss
