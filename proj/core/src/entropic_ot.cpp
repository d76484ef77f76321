#include "bridgekit/entropic_ot.hpp"

#include <algorithm>
#include <sstream>

namespace bridgekit::ot {

DiscreteMeasure DiscreteMeasure::make(Mat points, Vec weights) {
    require(points.rows() == weights.size(), "measure needs one weight per support point");
    require(weights.size() > 0, "measure must have at least one support point");
    require(points.allFinite() && weights.allFinite(), "measure entries must be finite");
    require((weights.array() >= 0.0).all(), "measure weights must be nonnegative");
    require(std::abs(weights.sum() - 1.0) <= 1e-12, "measure weights must sum to 1");
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        for (Eigen::Index j = i + 1; j < points.rows(); ++j)
            require(points.row(i) != points.row(j), "measure support points must be distinct");
    return {std::move(points), std::move(weights)};
}

Mat squared_euclidean_cost(const Mat& x, const Mat& y) {
    require(x.cols() == y.cols(), "cost needs supports of equal dimension");
    Mat c(x.rows(), y.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < y.rows(); ++j) c(i, j) = (x.row(i) - y.row(j)).squaredNorm();
    return c;
}

namespace {

void check_problem(const Vec& a, const Vec& b, const Mat& cost, double eps) {
    require(eps > 0.0, "epsilon must be positive");
    require(cost.rows() == a.size() && cost.cols() == b.size(), "cost dimensions must match the measures");
    require(cost.allFinite(), "cost matrix has non-finite entries");
    require((a.array() >= 0.0).all() && (b.array() >= 0.0).all(), "marginal weights must be nonnegative");
    require(std::abs(a.sum() - 1.0) <= 1e-12 && std::abs(b.sum() - 1.0) <= 1e-12, "marginals must sum to 1");
}

std::vector<Eigen::Index> support(const Vec& w) {
    std::vector<Eigen::Index> s;
    for (Eigen::Index i = 0; i < w.size(); ++i)
        if (w[i] > 0.0) s.push_back(i);
    return s;
}

// phi_hat_j = -eps log sum_i a_i exp((phi_i - c_ij)/eps), stable in the log domain
void update_columns(const Vec& log_a, const Vec& phi, const Mat& cost, double eps, Vec& phi_hat) {
    const Eigen::Index n = cost.rows();
    Vec tmp(n);
    for (Eigen::Index j = 0; j < cost.cols(); ++j) {
        for (Eigen::Index i = 0; i < n; ++i) tmp[i] = log_a[i] + (phi[i] - cost(i, j)) / eps;
        phi_hat[j] = -eps * log_sum_exp(tmp);
    }
}

void update_rows(const Vec& log_b, const Vec& phi_hat, const Mat& cost, double eps, Vec& phi) {
    const Eigen::Index m = cost.cols();
    Vec tmp(m);
    for (Eigen::Index i = 0; i < cost.rows(); ++i) {
        for (Eigen::Index j = 0; j < m; ++j) tmp[j] = log_b[j] + (phi_hat[j] - cost(i, j)) / eps;
        phi[i] = -eps * log_sum_exp(tmp);
    }
}

}  // namespace

double total_variation(const Vec& p, const Vec& q) { return 0.5 * (p - q).cwiseAbs().sum(); }

SinkhornResult sinkhorn_solve(const Vec& a_full, const Vec& b_full, const Mat& cost_full,
                              const SinkhornConfig& config) {
    check_problem(a_full, b_full, cost_full, config.epsilon);
    require(config.marginal_tol > 0.0, "marginal_tol must be positive");
    require(config.max_iters > 0, "max_iters must be positive");
    const double eps = config.epsilon;

    const auto rows = support(a_full), cols = support(b_full);
    const Eigen::Index n = Eigen::Index(rows.size()), m = Eigen::Index(cols.size());
    Vec a(n), b(m);
    Mat cost(n, m);
    for (Eigen::Index i = 0; i < n; ++i) a[i] = a_full[rows[i]];
    for (Eigen::Index j = 0; j < m; ++j) b[j] = b_full[cols[j]];
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j) cost(i, j) = cost_full(rows[i], cols[j]);
    const Vec log_a = a.array().log(), log_b = b.array().log();

    Vec phi = Vec::Zero(n), phi_hat = Vec::Zero(m);
    SinkhornReport report;
    Mat kernel;
    Vec u, v;
    if (!config.log_domain) {
        kernel = (-cost / eps).array().exp();
        u = Vec::Ones(n);
        v = Vec::Ones(m);
    }

    auto column_error = [&]() {
        Mat pi = coupling_from_potentials({phi, phi_hat}, a, b, cost, eps).weights;
        return total_variation(pi.colwise().sum().transpose(), b);
    };

    for (int it = 0; it < config.max_iters; ++it) {
        if (config.log_domain) {
            update_columns(log_a, phi, cost, eps, phi_hat);
            report.dual_objective_trace.push_back(dual_objective({phi, phi_hat}, a, b, cost, eps));
            update_rows(log_b, phi_hat, cost, eps, phi);
        } else {
            v = (kernel.transpose() * u.cwiseProduct(a)).cwiseInverse();
            phi_hat = eps * v.array().log().matrix();
            if (!v.allFinite() || !phi_hat.allFinite())
                throw NumericalFault("multiplicative Sinkhorn overflowed; use the log-domain solver");
            report.dual_objective_trace.push_back(dual_objective({phi, phi_hat}, a, b, cost, eps));
            u = (kernel * v.cwiseProduct(b)).cwiseInverse();
            phi = eps * u.array().log().matrix();
            if (!u.allFinite() || !phi.allFinite())
                throw NumericalFault("multiplicative Sinkhorn overflowed; use the log-domain solver");
        }
        report.dual_objective_trace.push_back(dual_objective({phi, phi_hat}, a, b, cost, eps));
        report.iterations_used = it + 1;
        const double err = column_error();
        report.marginal_error_trace.push_back(err);
        if (err <= config.marginal_tol) {
            report.converged = true;
            break;
        }
    }

    // re-embed; potentials on stripped points follow the same update formula
    DualPotentials pot{Vec::Zero(a_full.size()), Vec::Zero(b_full.size())};
    for (Eigen::Index j = 0; j < b_full.size(); ++j) {
        Vec tmp(n);
        for (Eigen::Index i = 0; i < n; ++i) tmp[i] = log_a[i] + (phi[i] - cost_full(rows[i], j)) / eps;
        pot.phi_hat[j] = -eps * log_sum_exp(tmp);
    }
    for (Eigen::Index j = 0; j < m; ++j) pot.phi_hat[cols[j]] = phi_hat[j];
    for (Eigen::Index i = 0; i < a_full.size(); ++i) {
        Vec tmp(m);
        for (Eigen::Index j = 0; j < m; ++j) tmp[j] = log_b[j] + (phi_hat[j] - cost_full(i, cols[j])) / eps;
        pot.phi[i] = -eps * log_sum_exp(tmp);
    }
    for (Eigen::Index i = 0; i < n; ++i) pot.phi[rows[i]] = phi[i];
    ensure_finite(pot.phi, "Sinkhorn potential phi");
    ensure_finite(pot.phi_hat, "Sinkhorn potential phi_hat");

    Coupling coupling = coupling_from_potentials(pot, a_full, b_full, cost_full, eps);
    return {std::move(coupling), std::move(pot), std::move(report)};
}

SinkhornResult sinkhorn_solve(const DiscreteMeasure& source, const DiscreteMeasure& target, const Mat& cost,
                              const SinkhornConfig& config) {
    return sinkhorn_solve(source.weights, target.weights, cost, config);
}

double dual_objective(const DualPotentials& p, const Vec& a, const Vec& b, const Mat& cost, double eps) {
    require(eps > 0.0, "epsilon must be positive");
    require(p.phi.size() == a.size() && p.phi_hat.size() == b.size(), "potential sizes must match the measures");
    require(cost.rows() == a.size() && cost.cols() == b.size(), "cost dimensions must match the measures");
    std::vector<double> terms;
    terms.reserve(std::size_t(a.size() * b.size()));
    double linear = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i)
        if (a[i] > 0.0) linear += p.phi[i] * a[i];
    for (Eigen::Index j = 0; j < b.size(); ++j)
        if (b[j] > 0.0) linear += p.phi_hat[j] * b[j];
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (a[i] <= 0.0) continue;
        for (Eigen::Index j = 0; j < b.size(); ++j) {
            if (b[j] <= 0.0) continue;
            terms.push_back(std::log(a[i]) + std::log(b[j]) + (p.phi[i] + p.phi_hat[j] - cost(i, j)) / eps);
        }
    }
    const double mass = std::exp(log_sum_exp(terms));
    const double value = linear - eps * (mass - 1.0);
    ensure_finite(value, "dual objective");
    return value;
}

Coupling coupling_from_potentials(const DualPotentials& p, const Vec& a, const Vec& b, const Mat& cost,
                                  double eps) {
    require(eps > 0.0, "epsilon must be positive");
    require(p.phi.allFinite() && p.phi_hat.allFinite(), "potentials must be finite");
    require(p.phi.size() == a.size() && p.phi_hat.size() == b.size(), "potential sizes must match the measures");
    Mat w(a.size(), b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i)
        for (Eigen::Index j = 0; j < b.size(); ++j)
            w(i, j) = (a[i] > 0.0 && b[j] > 0.0)
                          ? std::exp((p.phi[i] + p.phi_hat[j] - cost(i, j)) / eps) * a[i] * b[j]
                          : 0.0;
    ensure_finite(w, "coupling");
    return {std::move(w)};
}

double primal_objective(const Coupling& c, const Vec& a, const Vec& b, const Mat& cost, double eps) {
    Mat ref = a * b.transpose();
    return (c.weights.cwiseProduct(cost)).sum() + eps * kl_discrete(c.weights, ref);
}

double kl_discrete(std::span<const double> p, std::span<const double> q) {
    require(p.size() == q.size(), "kl_discrete needs arrays of the same shape");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0 || q[i] < 0.0) throw NumericalFault("kl_discrete received a negative weight");
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) return kInf;
        s += p[i] * std::log(p[i] / q[i]);
    }
    return std::max(0.0, s);
}

double kl_discrete(const Mat& p, const Mat& q) {
    require(p.rows() == q.rows() && p.cols() == q.cols(), "kl_discrete needs arrays of the same shape");
    return kl_discrete(std::span<const double>(p.data(), std::size_t(p.size())),
                       std::span<const double>(q.data(), std::size_t(q.size())));
}

JointGaussian gaussian_eot_closed_form(const Vec& mu0, const Mat& s0, const Vec& muT, const Mat& sT, double sigma) {
    const Eigen::Index d = mu0.size();
    require(muT.size() == d && s0.rows() == d && sT.rows() == d, "Gaussian marginals must share a dimension");
    require(sigma >= 0.0, "sigma must be nonnegative");
    require_spd(s0, "source covariance");
    require_spd(sT, "target covariance");
    const Mat r = sym_sqrt(s0), ri = sym_inv_sqrt(s0);
    const double s2 = sigma * sigma;
    const Mat inner = 4.0 * r * sT * r + s2 * s2 * Mat::Identity(d, d);
    const Mat dmat = sym_sqrt(0.5 * (inner + inner.transpose()));
    Mat c = 0.5 * (r * dmat * ri - s2 * Mat::Identity(d, d));
    JointGaussian g;
    g.mean.resize(2 * d);
    g.mean << mu0, muT;
    g.covariance.resize(2 * d, 2 * d);
    g.covariance << s0, c, c.transpose(), sT;
    g.covariance = 0.5 * (g.covariance + g.covariance.transpose());
    g.cross = std::move(c);
    ensure_finite(g.covariance, "Gaussian coupling covariance");
    return g;
}

}  // namespace bridgekit::ot
